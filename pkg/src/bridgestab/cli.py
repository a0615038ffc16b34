"""Command-line front end.

    bridgestab spectrum   [--n 16] [--k 1-10] [--flat-cable]
    bridgestab branch     [--k LIST] [--at-T T]
    bridgestab stability  [--k LIST] [--nu NU]       (needs branch files)
    bridgestab thresholds [--k LIST]
    bridgestab report     [--branches LIST]

Every command writes its outputs plus ``manifest.json`` into ``--out``.
Exit status: 0 all checks pass, 1 numerical deviation, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, dynamics, galerkin, modes, pipeline, reference
from .params import BridgeParams, ConfigError, default_tnb, load_config_file

log = logging.getLogger("bridgestab")

EXIT_OK = 0
EXIT_DEVIATION = 1
EXIT_USAGE = 2
DEFAULT_BRANCHES = tuple(range(1, 11))
SPECTRUM_N = 16
# figure-style snapshots are taken at these periods when the branch reaches them
FIGURE_PERIODS = {7: 2.18, 8: 1.86}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    params_fingerprint: str
    tolerances: dict
    truncations: dict
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    tool_version: str = __version__

    def write(self, out: Path) -> Path:
        self.outputs = sorted(set(self.outputs))
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1) + "\n")
        return path


class Run:
    """Shared state of one command invocation: parameters, output directory, manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.t0 = time.perf_counter()
        self.params = load_config_file(args.config) if args.config else default_tnb()
        self.flat = bool(getattr(args, "flat_cable", False))
        self.tol = args.tol
        if not 1e-13 <= self.tol <= 1e-6:
            raise UsageError(f"--tol must lie in [1e-13, 1e-6], got {self.tol}")
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(
            command=command,
            params_fingerprint=self.params.fingerprint(),
            tolerances={"integrator_rtol": self.tol, "newton": modes.NEWTON_TOL, "instability": 1e-4},
            truncations={},
        )

    def path(self, name: str) -> Path:
        self.manifest.outputs.append(name)
        return self.out / name

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def finish(self) -> None:
        self.manifest.wall_clock_s = round(time.perf_counter() - self.t0, 3)
        self.manifest.write(self.out)

    @property
    def workers(self) -> int:
        return self.args.jobs if self.args.jobs else (os.cpu_count() or 1)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def parse_k_list(text: str) -> list[int]:
    """``"1,3,5-7"`` -> ``[1, 3, 5, 6, 7]``."""
    ks: set[int] = set()
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part:
                a, b = (int(s) for s in part.split("-", 1))
                if a > b:
                    raise ValueError
                ks.update(range(a, b + 1))
            else:
                ks.add(int(part))
    except ValueError:
        raise UsageError(f"bad branch list {text!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError(f"branch list {text!r} must name positive integers")
    return sorted(ks)


def _truncation(args, k: int) -> int:
    n = args.n if args.n else modes.default_truncation(k)
    if k > n:
        raise UsageError(f"truncation too small: branch {k} needs n >= {k}, got n={n}")
    return n


def _branch_file(k: int) -> str:
    return f"branch_{k:02d}.json"


def load_cached_branch(run: Run, k: int, n: int, strict: bool) -> modes.Branch | None:
    """Branch from the output directory, validated against parameters and truncation.

    With ``strict`` a missing or invalid file is an error; otherwise it is
    ignored with a warning and the branch is recomputed.
    """
    path = run.out / _branch_file(k)
    if not path.exists():
        if strict:
            raise UsageError(f"no branch file {path}; run 'bridgestab branch --k {k}' first")
        return None
    try:
        br = modes.branch_from_json(path.read_text(), run.params.fingerprint())
        if br.k != k or br.n != n:
            raise modes.BranchFileError(f"file holds branch {br.k} at n={br.n}, wanted branch {k} at n={n}")
    except modes.BranchFileError as exc:
        if strict:
            raise UsageError(f"{path}: {exc}") from exc
        log.warning("ignoring branch cache %s (%s); recomputing from scratch", path, exc)
        return None
    return br


def _write_branch(run: Run, o: pipeline.BranchOutcome) -> None:
    k = o.k
    run.write_text(_branch_file(k), o.branch.to_json() + "\n")
    stab = "ER" in o.rows[0]
    header = ["T_s", "energy_MJ", "delta_m", "y1_max_m", "dominant", "symmetric"]
    keys = ["T", "energy_MJ", "delta_m", "y1_max", "dominant", "symmetric"]
    if stab:
        header += ["ER", "det_error", "reciprocity_error", "energy_drift", "ER_nu2", "nu2_verdict"]
        keys += ["ER", "det_error", "reciprocity_error", "energy_drift", "ER_nu2", "nu2_verdict"]
    run.write_csv(f"branch_{k:02d}_modes.csv", header, ([r[c] for c in keys] for r in o.rows))
    if stab:
        run.write_csv(f"er_{k:02d}.csv", ["energy_MJ", "ER"], ([r["energy_MJ"], r["ER"]] for r in o.rows))
    for name, (x, y) in o.snapshots.items():
        run.write_csv(f"snapshot_{k:02d}_{name}.csv", ["x_m", "y_m"], zip(x, y))
    for name, (t, Y) in o.series.items():
        header = ["t_s"] + [f"y{i + 1}_m" for i in range(Y.shape[1])]
        run.write_csv(f"components_{k:02d}_{name}.csv", header, ([ti, *yi] for ti, yi in zip(t, Y)))


def _jobs(run: Run, ks, *, stability: bool, cache: str, grid=()) -> list[pipeline.BranchJob]:
    """``cache`` is "none" (always recompute), "strict" (must load) or "lenient"."""
    jobs = []
    for k in ks:
        n = _truncation(run.args, k)
        run.manifest.truncations[str(k)] = n
        cached = None if cache == "none" else load_cached_branch(run, k, n, strict=cache == "strict")
        at_T = getattr(run.args, "at_T", None)
        jobs.append(pipeline.BranchJob(
            params=run.params, k=k, n=n, tol=run.tol, flat=run.flat,
            nu=getattr(run.args, "nu", None), stability=stability, cached=cached,
            grid_mj=tuple(grid), at_T=at_T if at_T is not None else FIGURE_PERIODS.get(k),
            E_max=None if run.args.e_max is None else run.args.e_max * 1e6,
        ))
    return jobs


def _run(run: Run, jobs) -> dict[int, pipeline.BranchOutcome]:
    log.info("analysing %d branch(es) with %d worker(s)", len(jobs), min(run.workers, len(jobs)))
    outcomes = pipeline.run_jobs(jobs, run.workers)
    for o in outcomes:
        log.info("branch %d: %d modes, %s, %.1f s", o.k, len(o.branch), o.branch.stop_reason, o.elapsed)
        _write_branch(run, o)
    return {o.k: o for o in outcomes}


def _nu_check(run: Run, ks):
    nu = run.args.nu
    if nu is not None:
        for k in ks:
            if not 1 <= nu <= _truncation(run.args, k):
                raise UsageError(f"--nu {nu} must lie in 1..n for branch {k}")


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(run: Run) -> int:
    n = run.args.n or SPECTRUM_N
    ks = parse_k_list(run.args.k) if run.args.k else list(DEFAULT_BRANCHES)
    k_max = max(ks)
    if k_max > n:
        raise UsageError(f"truncation too small: k_max={k_max} exceeds n={n}")
    run.manifest.truncations["spectrum"] = n
    rows = [r for r in pipeline.spectrum_rows(run.params, n, k_max, run.flat) if r["k"] in ks]
    if run.flat:
        header = ["k", "lambda", "period_s", "closed_form", "rel_error"]
        ok = all(r["rel_error"] <= 1e-10 for r in rows)
    else:
        header = ["k", "lambda", "period_s", "reference_s", "rel_dev"]
        ok = all(r["rel_dev"] is None or abs(r["rel_dev"]) <= reference.PERIOD_TOL for r in rows)
    run.write_csv("spectrum.csv", header, ([r[h] for h in header] for r in rows))
    print(f"{'k':>3} {'lambda':>14} {'period (s)':>11} " + ("closed form     rel err" if run.flat else "reference   deviation"))
    for r in rows:
        tail = (f"{r['closed_form']:14.8e} {r['rel_error']:9.1e}" if run.flat else
                f"{r['reference_s']:9.2f} {r['rel_dev']:+10.2%}" if r["reference_s"] else "")
        print(f"{r['k']:3d} {r['lambda']:14.8e} {r['period_s']:11.4f} {tail}")
    return EXIT_OK if ok else EXIT_DEVIATION


def cmd_branch(run: Run) -> int:
    ks = parse_k_list(run.args.k) if run.args.k else list(DEFAULT_BRANCHES)
    outcomes = _run(run, _jobs(run, ks, stability=False, cache="none"))
    print(f"{'k':>3} {'modes':>5} {'T range (s)':>19} {'E max (MJ)':>10}  stop")
    for k, o in outcomes.items():
        T = o.branch.periods
        print(f"{k:3d} {len(o.branch):5d} {T[0]:9.4f}-{T[-1]:9.4f} {o.branch.energies[-1] / 1e6:10.2f}  {o.branch.stop_reason}")
    return EXIT_OK


def _grid_scale(run: Run) -> float:
    return getattr(run.args, "grid_scale", 1.0) or 1.0


def _write_stability(run: Run, outcomes, scale: float = 1.0) -> None:
    rows = []
    for k, o in outcomes.items():
        th = o.threshold or {}
        rows.append([k, th.get("energy_MJ"), th.get("T"), th.get("delta_m"), th.get("ER_above"), th.get("message", "")])
    run.write_csv("thresholds_computed.csv", ["k", "energy_MJ", "T_s", "delta_m", "ER_above", "note"], rows)
    grid = []
    for k, o in outcomes.items():
        ref = reference.EXPANSION_RATE_GRID.get(k, ())
        for g in o.grid:
            idx = [i for i, E in enumerate(reference.GRID_MJ) if np.isclose(E * scale, g["energy_MJ"])]
            ref_er = ref[idx[0]] if idx and ref else None
            grid.append([k, g["energy_MJ"], g["ER"], ref_er, g["status"]])
    run.write_csv("er_grid.csv", ["k", "energy_MJ", "ER", "reference_ER", "status"], grid)


def cmd_stability(run: Run) -> int:
    ks = parse_k_list(run.args.k) if run.args.k else list(DEFAULT_BRANCHES)
    _nu_check(run, ks)
    scale = _grid_scale(run)
    grid = [E * scale for E in reference.GRID_MJ]
    outcomes = _run(run, _jobs(run, ks, stability=True, cache="strict", grid=grid))
    _write_stability(run, outcomes, scale)
    for k, o in outcomes.items():
        th = o.threshold
        desc = (f"threshold {th['energy_MJ']:.2f} MJ at T={th['T']:.4f} s, delta={th['delta_m']:.2f} m"
                if th["energy_MJ"] is not None else th["message"])
        cells = " ".join("   ---  " if g["ER"] is None else f"{g['ER']:8.5f}" for g in o.grid)
        print(f"branch {k:2d}: {desc}\n   ER at {', '.join(f'{E:g}' for E in grid)} MJ: {cells}")
    return EXIT_OK


def cmd_thresholds(run: Run) -> int:
    ks = parse_k_list(run.args.k) if run.args.k else list(DEFAULT_BRANCHES)
    _nu_check(run, ks)
    outcomes = _run(run, _jobs(run, ks, stability=True, cache="lenient"))
    _write_stability(run, outcomes)
    crit, rows = pipeline.check_thresholds(outcomes)
    _write_threshold_table(run, rows)
    for r in rows:
        if r["status"] == "skipped":
            continue
        print(_threshold_line(r))
    print(crit.line())
    return EXIT_OK if crit.passed in (True, None) else EXIT_DEVIATION


def _threshold_line(r) -> str:
    if "energy_MJ" not in r:
        return f"branch {r['k']:2d}: {r['status']} ({r.get('note', '')})"
    return (f"branch {r['k']:2d}: E {r['energy_MJ']:7.2f} MJ ({r['dev_energy']:+.1%})  "
            f"T {r['T']:7.4f} s ({r['dev_T']:+.1%})  delta {r['delta_m']:5.2f} m ({r['dev_delta']:+.1%})  {r['status']}")


def _write_threshold_table(run: Run, rows) -> None:
    cols = ["k", "energy_MJ", "ref_energy_MJ", "dev_energy", "T", "ref_T", "dev_T",
            "delta_m", "ref_delta_m", "dev_delta", "status", "note"]
    run.write_csv("thresholds.csv", cols, ([r.get(c) for c in cols] for r in rows))


def cmd_report(run: Run) -> int:
    ks = parse_k_list(run.args.branches) if run.args.branches else list(DEFAULT_BRANCHES)
    _nu_check(run, ks)
    grid = list(reference.GRID_MJ) + [10 * E for E in reference.GRID_MJ]
    criteria = []
    c1, spec_rows = pipeline.check_small_energy_periods(run.params)
    c2, flat_rows = pipeline.check_flat_cable(run.params)
    criteria += [c1, c2]
    run.write_csv("spectrum.csv", ["k", "lambda", "period_s", "reference_s", "rel_dev"],
                  ([r["k"], r["lambda"], r["period_s"], r["reference_s"], r["rel_dev"]] for r in spec_rows))
    outcomes = _run(run, _jobs(run, ks, stability=True, cache="lenient", grid=grid))
    _write_stability(run, outcomes)
    c3, th_rows = pipeline.check_thresholds(outcomes)
    c4, spot_rows = pipeline.check_spot_values(outcomes)
    criteria += [c3, c4]
    criteria += pipeline.check_properties(outcomes, run.params)
    criteria.append(pipeline.check_figures(outcomes))
    _write_threshold_table(run, th_rows)

    lines = [f"bridgestab {__version__} report, parameters {run.params.fingerprint()}", ""]
    lines.append("Small-energy periods")
    lines += [f"  branch {r['k']:2d}: {r['period_s']:7.3f} s (reference {r['reference_s']:.2f}, {r['rel_dev']:+.2%})" for r in spec_rows]
    lines += ["", "Instability thresholds"]
    lines += ["  " + (_threshold_line(r) if r["status"] != "skipped" else f"branch {r['k']:2d}: skipped") for r in th_rows]
    lines += ["", "Expansion-rate spot checks (score = |ER - ref| / (ref - 1))"]
    for r in spot_rows:
        if "ER" in r:
            lines.append(f"  {r['check']:>8}: ER {r['ER']:.5f} vs {r['ref_ER']:.5f}, score {r['score']:.2f} {r['status']}")
        else:
            lines.append(f"  {r['check']:>8}: {r['status']} {r.get('note', '')}")
    for label, scale in (("Expansion rates on the reference grid (MJ)", 1), ("Same grid read in units of 10 MJ (informational)", 10)):
        lines += ["", label]
        for k, o in outcomes.items():
            ref = reference.EXPANSION_RATE_GRID.get(k, ())
            cells = []
            for i, E in enumerate(reference.GRID_MJ):
                g = pipeline.grid_value(o, E * scale)
                val = "---" if g is None or g["ER"] is None else f"{g['ER']:.5f}"
                r = "---" if not ref or ref[i] is None else f"{ref[i]:.5f}"
                cells.append(f"{val}/{r}")
            lines.append(f"  branch {k:2d}: " + "  ".join(cells))
    lines += ["", "Criteria"] + ["  " + c.line() for c in criteria]
    skipped = [k for k in DEFAULT_BRANCHES if k not in outcomes]
    if skipped:
        lines.append(f"  branches not run: {', '.join(map(str, skipped))}")
    text = "\n".join(lines) + "\n"
    run.write_text("summary.txt", text)
    run.write_text("summary.json", json.dumps(
        {"criteria": [asdict(c) | {"status": c.status} for c in criteria],
         "thresholds": th_rows, "spot_checks": spot_rows}, indent=1, default=_json_default) + "\n")
    print(text, end="")
    return EXIT_DEVIATION if any(c.passed is False for c in criteria) else EXIT_OK


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------


COMMANDS = {
    "spectrum": cmd_spectrum,
    "branch": cmd_branch,
    "stability": cmd_stability,
    "thresholds": cmd_thresholds,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON parameter file (defaults: Tacoma Narrows)")
    common.add_argument("--n", type=int, help="Galerkin truncation (default 10 for k<=6, 16 above; 16 for spectrum)")
    common.add_argument("--tol", type=float, default=dynamics.DEFAULT_TOL, help="integrator relative tolerance")
    common.add_argument("--out", metavar="DIR", default="bridgestab-out", help="output directory")
    common.add_argument("--jobs", type=int, default=0, help="worker processes (default: CPU count)")
    common.add_argument("--flat-cable", action="store_true", help="horizontal-cable fixture instead of the catenary")
    common.add_argument("--e-max", type=float, dest="e_max", metavar="MJ",
                        help="continuation energy limit (default 1.5x the reference threshold)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="bridgestab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("spectrum", parents=[common], help="linear periods of the branches")
    s.add_argument("--k", metavar="LIST", help="branches, e.g. 1-10 (default 1-10)")
    s = sub.add_parser("branch", parents=[common], help="continue branches of nonlinear modes")
    s.add_argument("--k", metavar="LIST")
    s.add_argument("--at-T", type=float, dest="at_T", help="also emit snapshot and component series at this period")
    s = sub.add_parser("stability", parents=[common], help="expansion rates and thresholds from branch files")
    s.add_argument("--k", metavar="LIST")
    s.add_argument("--nu", type=int, help="torsional truncation (default n)")
    s.add_argument("--grid-scale", type=float, default=1.0, dest="grid_scale",
                   help="multiply the 2..14 MJ reporting grid by this factor")
    s = sub.add_parser("thresholds", parents=[common], help="instability thresholds against reference values")
    s.add_argument("--k", metavar="LIST")
    s.add_argument("--nu", type=int)
    s = sub.add_parser("report", parents=[common], help="full reproduction run with pass/fail summary")
    s.add_argument("--branches", "--k", metavar="LIST", dest="branches")
    s.add_argument("--nu", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.n is not None and args.n < 1:
        parser.error("--n must be positive")
    if args.e_max is not None and not args.e_max > 0:
        parser.error("--e-max must be positive")
    if args.jobs < 0:
        parser.error("--jobs must be non-negative")
    try:
        run = Run(args, args.command)
        status = COMMANDS[args.command](run)
        run.finish()
        return status
    except (UsageError, ConfigError, galerkin.ResolutionError) as exc:
        print(f"bridgestab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
