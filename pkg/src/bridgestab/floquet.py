"""Torsional stability of longitudinal modes.

Around a mode ``y(x, t)`` the torsion equation is linear with ``T``-periodic
coefficients. Projected on ``nu`` sine functions it reads
``massTheta W'' + K(t) W = 0``; with ``massTheta = L L^T`` the congruence
``Xi = L^-1 K L^-T`` gives the symmetric Hill system ``W'' + Xi(t) W = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_triangular

from . import dynamics, galerkin, modes
from .cable import CableProfile
from .galerkin import GalerkinSystem
from .params import BridgeParams

log = logging.getLogger(__name__)

TOL_INSTAB = 1e-4
TRAJECTORY_SAMPLES = 512


@dataclass(eq=False)
class TorsionalSystem:
    system: GalerkinSystem
    mode: modes.PeriodicMode
    nu: int
    T_y: float  # minimal period of the mode
    chol: np.ndarray  # lower Cholesky factor of the torsional mass (nu x nu)
    t_samples: np.ndarray
    Y_samples: np.ndarray  # (samples, n), one period, endpoint excluded

    def K(self, Y) -> np.ndarray:
        return galerkin.torsional_stiffness(self.system, Y, self.nu)

    def reduce(self, K) -> np.ndarray:
        Linv_K = solve_triangular(self.chol, K, lower=True)
        Xi = solve_triangular(self.chol, Linv_K.T, lower=True)
        return 0.5 * (Xi + Xi.T)

    def deck(self, t) -> np.ndarray:
        """Mode coefficients ``Y(t)`` by trigonometric interpolation of the cached period."""
        N = self.Y_samples.shape[0]
        coef = np.fft.rfft(self.Y_samples, axis=0) / N
        freqs = np.arange(coef.shape[0])
        ph = np.exp(2j * np.pi * np.outer(np.atleast_1d(t) / self.T_y, freqs))
        w = np.full(coef.shape[0], 2.0)
        w[0] = 1.0
        if N % 2 == 0:
            w[-1] = 1.0
        Y = np.real(ph @ (coef * w[:, None]))
        return Y[0] if np.ndim(t) == 0 else Y

    def Xi(self, t) -> np.ndarray:
        return self.reduce(self.K(self.deck(t)))


@dataclass
class MonodromyResult:
    matrix: np.ndarray
    multipliers: np.ndarray
    ER: float
    det: float
    T_y: float

    @property
    def moduli(self) -> np.ndarray:
        return np.sort(np.abs(self.multipliers))[::-1]

    def reciprocity_error(self) -> float:
        """Largest relative mismatch between the multipliers and their inverses."""
        lam = self.multipliers
        inv = 1.0 / lam
        return float(max(np.min(np.abs(lam - z)) / abs(z) for z in inv))

    def conjugation_error(self) -> float:
        lam = self.multipliers
        return float(max(np.min(np.abs(lam - np.conj(z))) / abs(z) for z in lam))


@dataclass
class Threshold:
    k: int
    energy_J: float | None
    T: float | None
    delta_m: float | None
    bracket: tuple | None
    ER_above: float | None = None
    message: str = ""

    @property
    def found(self) -> bool:
        return self.energy_J is not None


def assemble_torsional(system: GalerkinSystem, mode: modes.PeriodicMode, nu: int | None = None,
                       samples: int = TRAJECTORY_SAMPLES, tol: float = dynamics.DEFAULT_TOL) -> TorsionalSystem:
    nu = system.n if nu is None else nu
    if not 1 <= nu <= system.n:
        raise ValueError(f"nu={nu} must lie in 1..{system.n}")
    if samples < 4 * nu:
        raise ValueError("trajectory cache too coarse for the requested nu")
    T_y = mode.minimal_period
    Y0 = np.asarray(mode.Y0, dtype=float)
    t = np.arange(samples) * (T_y / samples)
    if np.any(Y0):
        tr = dynamics.integrate(system, dynamics.State(0.0, Y0, np.zeros_like(Y0)), T_y, tol,
                                samples=np.append(t, T_y))
        Ys = tr.Y[:-1]
    else:
        Ys = np.zeros((samples, system.n))
    chol = np.linalg.cholesky(system.massTheta[:nu, :nu])
    return TorsionalSystem(system, mode, nu, T_y, chol, t, Ys)


def zero_mode(system: GalerkinSystem, T: float = 1.0) -> modes.PeriodicMode:
    """Degenerate rest state viewed as a mode of period ``T``."""
    return modes.PeriodicMode(0, T, np.zeros(system.n), 0.0, 0.0, 0.0, system.n)


def _result(Mat, T_y) -> MonodromyResult:
    lam = np.linalg.eigvals(Mat)
    return MonodromyResult(Mat, lam, expansion_rate_from(lam, T_y), float(np.linalg.det(Mat)), T_y)


def monodromy(torsys: TorsionalSystem, *, method: str = "coupled", tol: float = dynamics.DEFAULT_TOL) -> MonodromyResult:
    """Transition matrix of ``Z' = [[0, I], [-Xi(t), 0]] Z`` over one mode period.

    ``coupled`` integrates the mode together with the 2nu canonical columns,
    so ``Xi`` is always evaluated on the exact trajectory; ``interpolated``
    uses the cached trajectory instead.
    """
    nu = torsys.nu
    sysm = torsys.system
    T_y = torsys.T_y
    Z0 = np.eye(2 * nu)
    chol = torsys.chol

    def columns_rhs(Xi, Z):
        W, Wd = Z[:nu], Z[nu:]
        return np.vstack((Wd, -Xi @ W))

    if method == "coupled" and np.any(torsys.mode.Y0):
        n = sysm.n
        flow = dynamics.get_flow(sysm)

        def rhs(t, u):
            Y = u[:n]
            Z = u[2 * n :].reshape(2 * nu, 2 * nu)
            Xi = torsys.reduce(galerkin.torsional_stiffness(sysm, Y, nu))
            return np.concatenate((u[n : 2 * n], flow.accel(Y), columns_rhs(Xi, Z).ravel()))

        Y0 = np.asarray(torsys.mode.Y0, dtype=float)
        u0 = np.concatenate((Y0, np.zeros(n), Z0.ravel()))
        atol = np.full(u0.size, tol)
        atol[:2 * n] = tol * max(np.max(np.abs(Y0)), 1e-6)
    elif method in ("coupled", "interpolated"):

        def rhs(t, u):
            return columns_rhs(torsys.Xi(t), u.reshape(2 * nu, 2 * nu)).ravel()

        u0 = Z0.ravel()
        atol = tol
        n = 0
    else:
        raise ValueError(f"unknown method {method!r}")
    sol = solve_ivp(rhs, (0.0, T_y), u0, method=dynamics.METHOD, rtol=tol, atol=atol)
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        raise dynamics.IntegrationError(f"monodromy integration failed: {sol.message}")
    Mat = sol.y[2 * n :, -1].reshape(2 * nu, 2 * nu)
    return _result(Mat, T_y)


def expansion_rate_from(multipliers, T_y: float) -> float:
    return float(np.max(np.abs(multipliers)) ** (1.0 / T_y))


def expansion_rate(result: MonodromyResult, T_y: float | None = None) -> float:
    """``max_j |lambda_j| ** (1 / T_y)``, the per-second growth factor."""
    return expansion_rate_from(result.multipliers, result.T_y if T_y is None else T_y)


def mode_expansion_rate(system: GalerkinSystem, mode: modes.PeriodicMode, nu: int | None = None,
                        tol: float = dynamics.DEFAULT_TOL) -> MonodromyResult:
    return monodromy(assemble_torsional(system, mode, nu, tol=tol), tol=tol)


def gamma_coefficients(params: BridgeParams, profile: CableProfile):
    """Torsional frequencies squared of the first two sine modes about the rest state."""
    L, ell = params.L, params.ell
    x, w, xi, spp = profile.nodes, profile.weights, profile.xi, profile.spp
    c = params.cable_stiffness
    mass = (params.M / 3 + 2 * params.m * xi) * ell**2
    s1, s2 = np.sin(np.pi * x / L), np.sin(2 * np.pi * x / L)
    c1, c2 = np.cos(np.pi * x / L), np.cos(2 * np.pi * x / L)
    norm1 = np.dot(w, mass * s1**2)
    norm2 = np.dot(w, mass * s2**2)
    g1 = (
        params.GK * np.pi**2 / (2 * L)
        + 2 * np.pi**2 * ell**2 * params.H0 / L**2 * np.dot(w, c1**2 / xi**2)
        + 2 * c * ell**2 * np.dot(w, spp * s1 / xi**3) ** 2
    ) / norm1
    g2 = (2 * params.GK * np.pi**2 / L + 8 * np.pi**2 * ell**2 * params.H0 / L**2 * np.dot(w, c2**2 / xi**2)) / norm2
    return float(g1), float(g2)


def is_generic(gamma: float, T0: float, tol: float = 1e-3) -> bool:
    """True when ``T0 sqrt(gamma) / pi`` is not within ``tol`` of an integer."""
    r = T0 * math.sqrt(gamma) / math.pi
    return abs(r - round(r)) > tol


def zhukovskii_test(p_samples, T: float):
    """Sufficient stability test for the Hill equation ``z'' + p(t) z = 0``.

    Returns ``("stable", n)`` when the coefficient stays within
    ``[n^2 pi^2 / T^2, (n+1)^2 pi^2 / T^2]`` for some ``n >= 0``, otherwise
    ``("inconclusive", None)``.
    """
    p = np.asarray(p_samples, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite coefficient samples")
    lo, hi = p.min(), p.max()
    if lo < 0:
        return "inconclusive", None
    n = math.floor(T * math.sqrt(lo) / math.pi)
    # the sampled minimum may sit exactly on a boundary
    for cand in (n, n - 1):
        if cand >= 0 and cand**2 * math.pi**2 / T**2 <= lo and hi <= (cand + 1) ** 2 * math.pi**2 / T**2:
            return "stable", cand
    return "inconclusive", None


def nu2_sufficient_stability(torsys: TorsionalSystem, samples: int | None = None,
                              same_interval: bool = False) -> str:
    """Diagonal-plus-residual criterion for a two-mode torsional system.

    The residual matrix is bounded by ``+-|chi_12| I``, so stability follows
    when every Hill equation ``chi_kk + a |chi_12|`` (``-1 <= a <= 1``) is
    strongly stable. The family is affine in ``a``; requiring the whole
    envelope ``[min(chi_kk - |chi_12|), max(chi_kk + |chi_12|)]`` to sit in one
    Zhukovskii interval certifies every member at once.

    When the two diagonal entries fall in different intervals the pair can
    still lose stability through a combination resonance
    ``omega_1 + omega_2 ~ 2 pi m / T``; ``same_interval=True`` additionally
    demands a common interval, which is the matrix form of the test and is
    rigorous.
    """
    if torsys.nu != 2:
        raise ValueError("criterion requires nu = 2")
    T = torsys.T_y
    if samples is None:
        t = torsys.t_samples
    else:
        t = np.arange(samples) * (T / samples)
    Xi = np.array([torsys.Xi(tt) for tt in t])
    r = np.abs(Xi[:, 0, 1])
    zones = set()
    for k in range(2):
        envelope = np.concatenate((Xi[:, k, k] - r, Xi[:, k, k] + r))
        verdict, zone = zhukovskii_test(envelope, T)
        if verdict != "stable":
            return "inconclusive"
        zones.add(zone)
    if same_interval and len(zones) > 1:
        return "inconclusive"
    return "stable"


def branch_expansion_rates(system: GalerkinSystem, branch: modes.Branch, nu: int | None = None,
                           tol: float = dynamics.DEFAULT_TOL) -> list[MonodromyResult]:
    return [mode_expansion_rate(system, m, nu, tol) for m in branch.modes]


def find_threshold(system: GalerkinSystem, branch: modes.Branch, nu: int | None = None,
                   tol_instab: float = TOL_INSTAB, rates=None, rel_energy=0.01,
                   tol: float = dynamics.DEFAULT_TOL) -> Threshold:
    """First crossing of ``ER = 1 + tol_instab`` along the branch, refined by bisection in ``T``."""
    if rates is None:
        rates = [r.ER for r in branch_expansion_rates(system, branch, nu, tol)]
    rates = np.asarray(rates, dtype=float)
    unstable = np.flatnonzero(rates > 1.0 + tol_instab)
    if unstable.size == 0 or unstable[0] == 0:
        msg = "no threshold in range" if unstable.size == 0 else "branch unstable from its first point"
        return Threshold(branch.k, None, None, None, None, message=msg)
    i = int(unstable[0])
    lo, hi = branch.modes[i - 1], branch.modes[i]
    er_hi = float(rates[i])
    if branch.gap_between(i) is not None:
        # the crossing sits in a stretch skipped at an internal resonance;
        # the first unstable point computed is the best available estimate
        return Threshold(branch.k, hi.energy, hi.T, hi.delta, (lo, hi), er_hi,
                         message="crossing inside a resonance gap; upper bracket reported")
    while (hi.energy - lo.energy) > rel_energy * hi.energy:
        T = 0.5 * (lo.T + hi.T)
        w = 0.5
        guess = lo.Y0 + w * (hi.Y0 - lo.Y0)
        try:
            mid = modes.newton_mode(system, branch.k, T, guess, multiple=branch.multiple, tol=tol)
        except (modes.NewtonError, dynamics.IntegrationError) as exc:
            log.warning("threshold bisection stopped on branch %d: %s", branch.k, exc)
            break
        if int(np.argmax(np.abs(mid.Y0))) != branch.k - 1:
            log.warning("threshold bisection left branch %d at T=%.5f", branch.k, T)
            break
        er = mode_expansion_rate(system, mid, nu, tol).ER
        if er > 1.0 + tol_instab:
            hi, er_hi = mid, er
        else:
            lo = mid
    E = 0.5 * (lo.energy + hi.energy)
    return Threshold(branch.k, E, 0.5 * (lo.T + hi.T), 0.5 * (lo.delta + hi.delta), (lo, hi), er_hi)
