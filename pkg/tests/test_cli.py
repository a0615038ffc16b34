import csv
import json
import logging
import subprocess
import sys

import pytest

from bridgestab import cli
from bridgestab.params import default_tnb


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path), "--jobs", "1"])


def test_parse_k_list():
    assert cli.parse_k_list("1,3,5-7") == [1, 3, 5, 6, 7]
    assert cli.parse_k_list("4, 2,2") == [2, 4]
    for bad in ("", "0", "3-1", "a", "1-x"):
        with pytest.raises(cli.UsageError):
            cli.parse_k_list(bad)


def test_spectrum_passes(tmp_path, capsys):
    assert run(tmp_path, "spectrum") == 0
    rows = list(csv.DictReader(open(tmp_path / "spectrum.csv")))
    assert [int(r["k"]) for r in rows] == list(range(1, 11))
    assert all(abs(float(r["rel_dev"])) <= 0.02 for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "spectrum"
    assert manifest["params_fingerprint"] == default_tnb().fingerprint()
    assert manifest["outputs"] == ["spectrum.csv"]


def test_flat_spectrum(tmp_path):
    assert run(tmp_path, "spectrum", "--flat-cable", "--k", "1-4") == 0
    rows = list(csv.DictReader(open(tmp_path / "spectrum.csv")))
    assert len(rows) == 4 and max(float(r["rel_error"]) for r in rows) < 1e-10


def test_spectrum_deviation_exit_code(tmp_path):
    cfg = tmp_path / "stiff.json"
    cfg.write_text(json.dumps({"EI": 10 * default_tnb().EI}))
    assert run(tmp_path, "spectrum", "--config", str(cfg)) == 1


@pytest.mark.parametrize("content,needle", [
    ("{not json", "cannot parse"),
    ('{"H0": 1.0, "bogus": 3}', "bogus"),
    ('{"L": -5}', "L"),
])
def test_bad_config_is_usage_error(tmp_path, capsys, content, needle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(content)
    assert run(tmp_path, "spectrum", "--config", str(cfg)) == 2
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert run(tmp_path, "spectrum", "--config", str(tmp_path / "nope.json")) == 2
    assert "cannot read" in capsys.readouterr().err


def test_truncation_too_small(tmp_path, capsys):
    assert run(tmp_path, "spectrum", "--n", "8") == 2
    assert "truncation too small" in capsys.readouterr().err
    assert run(tmp_path, "branch", "--k", "9", "--n", "8") == 2


def test_stability_requires_branch_file(tmp_path, capsys):
    assert run(tmp_path, "stability", "--k", "3") == 2
    assert "bridgestab branch" in capsys.readouterr().err


def test_bad_tolerance(tmp_path):
    assert run(tmp_path, "spectrum", "--tol", "1e-3") == 2


def test_branch_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "branch", "--k", "3", "--e-max", "2") == 0
    assert run(b, "branch", "--k", "3", "--e-max", "2") == 0
    for name in ("branch_03.json", "branch_03_modes.csv", "snapshot_03_first.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["truncations"] == {"3": 10}
    for name in manifest["outputs"]:
        assert (a / name).exists()


def test_stability_from_cache_and_fingerprint(tmp_path, capsys):
    assert run(tmp_path, "branch", "--k", "3", "--e-max", "2") == 0
    assert run(tmp_path, "stability", "--k", "3") in (0, 1)
    rows = list(csv.DictReader(open(tmp_path / "er_03.csv")))
    assert rows and all(float(r["ER"]) < 1 + 1e-4 for r in rows)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"H0": 1.01 * default_tnb().H0}))
    assert run(tmp_path, "stability", "--k", "3", "--config", str(cfg)) == 2
    assert "parameters" in capsys.readouterr().err


def test_corrupt_cache_is_recomputed(tmp_path, caplog):
    (tmp_path / "branch_03.json").write_text('{"k": 3, "points": [')
    with caplog.at_level(logging.WARNING, logger="bridgestab"):
        status = run(tmp_path, "report", "--branches", "3", "--e-max", "3")
    assert status in (0, 1)
    assert "recomputing from scratch" in caplog.text
    doc = json.loads((tmp_path / "branch_03.json").read_text())
    assert doc["k"] == 3 and len(doc["points"]) > 3
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert "summary.txt" in manifest["outputs"]
    for name in manifest["outputs"]:
        assert (tmp_path / name).exists()


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bridgestab.cli", "spectrum", "--k", "1-3", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "10.9" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "bridgestab.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
