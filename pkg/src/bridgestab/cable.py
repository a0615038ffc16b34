"""Equilibrium shape of the sustaining cable.

The rest position solves ``H0 s'' = (M/2 + m sqrt(1 + s'^2)) g`` with
``s(0) = s(L) = s0``. It is computed by Newton iteration on a Chebyshev
collocation discretization and then sampled on composite Gauss-Legendre
panels, which every downstream quadrature reuses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial.legendre import leggauss

from .params import BridgeParams

PANEL_ORDER = 16
DEFAULT_NODES = 1024
COLLOCATION_DEGREE = 64


class CableSolveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CableProfile:
    """Cable rest shape sampled on a Gauss-Legendre quadrature grid.

    ``s'' `` is obtained from the ODE itself as ``load0 + load1 * xi`` so it
    is exact and smooth; ``s`` and ``s'`` come from the Chebyshev series
    ``coef`` on ``[0, L]``.
    """

    L: float
    s0: float
    H0: float
    nodes: np.ndarray
    weights: np.ndarray
    s: np.ndarray
    sp: np.ndarray
    spp: np.ndarray
    xi: np.ndarray
    H: np.ndarray
    computed_length: float
    coef: np.ndarray
    load0: float
    load1: float
    residual: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def integrate(self, values) -> float:
        """Quadrature of samples given at ``nodes``."""
        return float(np.dot(self.weights, values))


def gauss_legendre_panels(L: float, n_nodes: int, order: int = PANEL_ORDER):
    """Composite Gauss-Legendre nodes and weights on [0, L]."""
    panels = max(1, math.ceil(n_nodes / order))
    xg, wg = leggauss(order)
    edges = np.linspace(0.0, L, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def _cheb_lobatto(N: int):
    """Chebyshev-Gauss-Lobatto points on [-1, 1] (ascending) and the first derivative matrix."""
    k = np.arange(N + 1)
    t = -np.cos(np.pi * k / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** k
    dt = t[:, None] - t[None, :]
    D = np.outer(c, 1.0 / c) / (dt + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return t, D


def _from_coef(params: BridgeParams, coef, load0, load1, n_nodes, residual=0.0) -> CableProfile:
    L = params.L
    nodes, weights = gauss_legendre_panels(L, n_nodes)
    tn = 2.0 * nodes / L - 1.0
    s = C.chebval(tn, coef)
    sp = C.chebval(tn, C.chebder(coef)) * (2.0 / L)
    xi = np.sqrt(1.0 + sp**2)
    spp = load0 + load1 * xi
    return CableProfile(
        L=L,
        s0=params.s0,
        H0=params.H0,
        nodes=nodes,
        weights=weights,
        s=s,
        sp=sp,
        spp=spp,
        xi=xi,
        H=params.H0 * xi,
        computed_length=float(np.dot(weights, xi)),
        coef=np.asarray(coef, dtype=float),
        load0=float(load0),
        load1=float(load1),
        residual=residual,
    )


def solve_cable_shape(
    params: BridgeParams,
    n_nodes: int = DEFAULT_NODES,
    *,
    degree: int = COLLOCATION_DEGREE,
    tol: float = 1e-13,
    max_iter: int = 30,
) -> CableProfile:
    """Solve the cable equilibrium problem.

    Newton iteration on the collocated equations, seeded with the
    massless-cable parabola ``s0 + (M g / 4 H0) x (x - L)``.
    """
    if n_nodes < 64:
        raise ValueError(f"n_nodes must be at least 64, got {n_nodes}")
    L, H0, g = params.L, params.H0, params.g
    load0 = params.M * g / (2.0 * H0)
    load1 = params.m * g / H0

    t, D = _cheb_lobatto(degree)
    x = 0.5 * L * (t + 1.0)
    D1 = D * (2.0 / L)
    D2 = D1 @ D1

    s = params.s0 + 0.5 * load0 * x * (x - L)
    interior = slice(1, degree)
    scale = load0 + load1
    res_norm = np.inf
    for _ in range(max_iter):
        sp = D1 @ s
        xi = np.sqrt(1.0 + sp**2)
        R = D2 @ s - (load0 + load1 * xi)
        R[0] = s[0] - params.s0
        R[-1] = s[-1] - params.s0
        res_norm = np.max(np.abs(R[interior])) / scale
        J = D2 - load1 * (sp / xi)[:, None] * D1
        J[0] = 0.0
        J[0, 0] = 1.0
        J[-1] = 0.0
        J[-1, -1] = 1.0
        ds = np.linalg.solve(J, -R)
        s = s + ds
        if np.max(np.abs(ds)) < tol * params.s0 and res_norm < 1e-10:
            break
    else:
        raise CableSolveError(f"cable iteration did not converge (relative residual {res_norm:.3e})")

    coef = C.chebfit(t, s, degree)
    # residual of the interpolant measured off the collocation points
    xr = np.linspace(0.0, L, 4 * degree + 3)[1:-1]
    tr = 2.0 * xr / L - 1.0
    spr = C.chebval(tr, C.chebder(coef)) * (2.0 / L)
    sppr = C.chebval(tr, C.chebder(coef, 2)) * (2.0 / L) ** 2
    residual = float(np.max(np.abs(sppr - (load0 + load1 * np.sqrt(1 + spr**2)))) / scale)
    return _from_coef(params, coef, load0, load1, n_nodes, residual)


def flat_profile(params: BridgeParams, n_nodes: int = DEFAULT_NODES) -> CableProfile:
    """Horizontal-cable fixture: ``s = s0``, ``s' = s'' = 0``, ``xi = 1``."""
    return _from_coef(params, np.array([params.s0]), 0.0, 0.0, max(n_nodes, PANEL_ORDER))


def profile_eval(profile: CableProfile, x):
    """Evaluate ``(s, s', s'', xi)`` at positions ``x`` in ``[0, L]``."""
    xa = np.asarray(x, dtype=float)
    eps = 1e-12 * profile.L
    if np.any(xa < -eps) or np.any(xa > profile.L + eps) or not np.all(np.isfinite(xa)):
        raise ValueError(f"x must lie in [0, {profile.L}]")
    t = 2.0 * np.clip(xa, 0.0, profile.L) / profile.L - 1.0
    s = C.chebval(t, profile.coef)
    sp = C.chebval(t, C.chebder(profile.coef)) * (2.0 / profile.L)
    xi = np.sqrt(1.0 + sp**2)
    spp = profile.load0 + profile.load1 * xi
    if xa.ndim == 0:
        return float(s), float(sp), float(spp), float(xi)
    return s, sp, spp, xi


def cable_length(profile: CableProfile) -> float:
    """Rest length of the cable, the quadrature of ``xi`` over ``[0, L]``."""
    return profile.integrate(profile.xi)


def midspan_sag(profile: CableProfile) -> float:
    return profile.s0 - profile_eval(profile, 0.5 * profile.L)[0]


def write_csv(profile: CableProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "s", "sp", "spp", "xi"])
        for row in zip(profile.nodes, profile.s, profile.sp, profile.spp, profile.xi):
            w.writerow([repr(float(v)) for v in row])
