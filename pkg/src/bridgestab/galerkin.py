"""Sine-basis Galerkin projection of the deck equations.

With ``y = sum_k Y_k sin(k pi x / L)`` the longitudinal equation becomes
``massY Y'' = F(Y)`` where ``F = -grad V`` and

    V(Y) = 1/2 Y.bendY.Y + H0 Y.Q.Y + H0 C:YYY + c [(v.Y)^2 + (v.Y)(Y.D.Y)]

with ``c = A E / Lc``. Divergence-form terms are integrated by parts once
against the hinged boundary values, so only ``s'`` and ``s''`` of the cable
enter the tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .cable import CableProfile
from .params import BridgeParams

MIN_NODES_PER_HALF_WAVE = 16


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GalerkinSystem:
    params: BridgeParams
    profile: CableProfile
    n: int
    wavenumbers: np.ndarray
    massY: np.ndarray
    massTheta: np.ndarray
    bendY: np.ndarray
    stiffTorsion: np.ndarray
    Q: np.ndarray
    D: np.ndarray
    C: np.ndarray
    v: np.ndarray
    cholY: tuple
    cholTheta: tuple

    @property
    def cable_stiffness(self) -> float:
        return self.params.cable_stiffness

    @property
    def linear_stiffness(self) -> np.ndarray:
        """Stiffness of the linearization at rest, ``bendY + 2 H0 Q + 2 c v v^T``."""
        p = self.params
        return self.bendY + 2.0 * p.H0 * self.Q + 2.0 * p.cable_stiffness * np.outer(self.v, self.v)


def basis(n: int, L: float, x):
    """Sine basis values and derivatives, each shaped ``(n, len(x))``."""
    kk = np.arange(1, n + 1) * math.pi / L
    arg = np.outer(kk, x)
    return np.sin(arg), kk[:, None] * np.cos(arg)


def assemble(params: BridgeParams, profile: CableProfile, n: int) -> GalerkinSystem:
    if n < 1:
        raise ValueError("n must be positive")
    if profile.n_nodes < MIN_NODES_PER_HALF_WAVE * n:
        raise ResolutionError(
            f"{profile.n_nodes} quadrature nodes cannot resolve n={n}; "
            f"need at least {MIN_NODES_PER_HALF_WAVE * n}"
        )
    L = params.L
    w = profile.weights
    xi = profile.xi
    e, de = basis(n, L, profile.nodes)
    kk = np.arange(1, n + 1) * math.pi / L

    massY = (e * ((params.M + 2 * params.m * xi) * w)) @ e.T
    massTheta = (e * ((params.M / 3 + 2 * params.m * xi) * w)) @ e.T
    Q = (de * (w / xi**2)) @ de.T
    D = (de * (w / xi**3)) @ de.T
    v = e @ (w * profile.spp / xi**3)
    Cw = de * (w * profile.sp / xi**4)
    Ct = np.einsum("ip,jp,kp->ijk", Cw, de, de, optimize=True)
    # fully symmetric by construction; symmetrize away rounding
    Ct = (
        Ct
        + Ct.transpose(0, 2, 1)
        + Ct.transpose(1, 0, 2)
        + Ct.transpose(1, 2, 0)
        + Ct.transpose(2, 0, 1)
        + Ct.transpose(2, 1, 0)
    ) / 6.0

    def sym(a):
        return 0.5 * (a + a.T)

    massY, massTheta, Q, D = map(sym, (massY, massTheta, Q, D))
    half = 0.5 * L
    return GalerkinSystem(
        params=params,
        profile=profile,
        n=n,
        wavenumbers=kk,
        massY=massY,
        massTheta=massTheta,
        bendY=np.diag(params.EI * kk**4 * half),
        stiffTorsion=np.diag(params.GK / params.ell**2 * kk**2 * half),
        Q=Q,
        D=D,
        C=Ct,
        v=v,
        cholY=cho_factor(massY, lower=True),
        cholTheta=cho_factor(massTheta, lower=True),
    )


def restrict(system: GalerkinSystem, keep) -> GalerkinSystem:
    """Subsystem on the basis functions with (0-based) indices ``keep``.

    Used to follow a branch through an internal resonance with the
    resonant component removed.
    """
    keep = np.asarray(keep, dtype=int)
    if keep.size == 0 or np.unique(keep).size != keep.size or keep.min() < 0 or keep.max() >= system.n:
        raise ValueError("keep must list distinct indices in range")
    ix = np.ix_(keep, keep)
    massY = system.massY[ix]
    massTheta = system.massTheta[ix]
    return GalerkinSystem(
        params=system.params,
        profile=system.profile,
        n=keep.size,
        wavenumbers=system.wavenumbers[keep],
        massY=massY,
        massTheta=massTheta,
        bendY=system.bendY[ix],
        stiffTorsion=system.stiffTorsion[ix],
        Q=system.Q[ix],
        D=system.D[ix],
        C=system.C[np.ix_(keep, keep, keep)],
        v=system.v[keep],
        cholY=cho_factor(massY, lower=True),
        cholTheta=cho_factor(massTheta, lower=True),
    )


def force(system: GalerkinSystem, Y) -> np.ndarray:
    """Generalized restoring force ``F(Y) = -grad V(Y)``."""
    p = system.params
    n = system.n
    c = p.cable_stiffness
    DY = system.D @ Y
    vY = system.v @ Y
    quad = system.C.reshape(n, n * n) @ np.outer(Y, Y).ravel()
    return (
        -system.bendY @ Y
        - 2.0 * p.H0 * (system.Q @ Y)
        - 3.0 * p.H0 * quad
        - c * (Y @ DY) * system.v
        - 2.0 * c * vY * (system.v + DY)
    )


def acceleration(system: GalerkinSystem, Y) -> np.ndarray:
    return cho_solve(system.cholY, force(system, np.asarray(Y, dtype=float)))


def potential_energy(system: GalerkinSystem, Y) -> float:
    p = system.params
    n = system.n
    Y = np.asarray(Y, dtype=float)
    c = p.cable_stiffness
    vY = system.v @ Y
    cubic = Y @ (system.C.reshape(n, n * n) @ np.outer(Y, Y).ravel())
    return float(
        0.5 * Y @ system.bendY @ Y
        + p.H0 * Y @ system.Q @ Y
        + p.H0 * cubic
        + c * (vY**2 + vY * (Y @ system.D @ Y))
    )


def kinetic_energy(system: GalerkinSystem, V) -> float:
    V = np.asarray(V, dtype=float)
    return float(0.5 * V @ system.massY @ V)


def contract_C(system: GalerkinSystem, Y) -> np.ndarray:
    """Matrix ``(C.Y)_jk = sum_i C_ijk Y_i``."""
    n = system.n
    return (system.C.reshape(n, n * n).T @ Y).reshape(n, n)


def _nonlocal_hessian(system: GalerkinSystem, Y) -> np.ndarray:
    v = system.v
    DY = system.D @ Y
    return 2.0 * (np.outer(v, v) + np.outer(v, DY) + np.outer(DY, v) + (v @ Y) * system.D)


def hessian(system: GalerkinSystem, Y) -> np.ndarray:
    """Second derivative of ``V``; ``-hessian`` is the Jacobian of ``force``."""
    p = system.params
    Y = np.asarray(Y, dtype=float)
    return (
        system.bendY
        + 2.0 * p.H0 * system.Q
        + 6.0 * p.H0 * contract_C(system, Y)
        + p.cable_stiffness * _nonlocal_hessian(system, Y)
    )


def torsional_stiffness(system: GalerkinSystem, Y, nu: int | None = None) -> np.ndarray:
    """Projected stiffness of the torsion equation linearized about deck shape ``Y``.

    It coincides with the longitudinal Hessian once bending is replaced by the
    torsional rigidity ``GK / ell^2``.
    """
    p = system.params
    Y = np.asarray(Y, dtype=float)
    K = (
        system.stiffTorsion
        + 2.0 * p.H0 * system.Q
        + 6.0 * p.H0 * contract_C(system, Y)
        + p.cable_stiffness * _nonlocal_hessian(system, Y)
    )
    if nu is not None:
        K = K[:nu, :nu]
    return K


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs of the linearized deck problem, ascending.

    ``vectors[:, j]`` is mass-normalized with its largest-magnitude entry
    positive. ``dominant[j]`` is the (1-based) index of that entry, which
    labels the branch the eigenmode seeds.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    dominant: np.ndarray

    @property
    def periods(self) -> np.ndarray:
        return 2.0 * np.pi / np.sqrt(self.eigenvalues)

    def index_of_branch(self, k: int) -> int:
        hits = np.flatnonzero(self.dominant == k)
        if hits.size != 1:
            raise ValueError(f"no unique eigenmode dominated by component {k}")
        return int(hits[0])

    def branch_eigenpair(self, k: int):
        j = self.index_of_branch(k)
        return float(self.eigenvalues[j]), self.vectors[:, j]


def linear_spectrum(system: GalerkinSystem, k_max: int | None = None) -> Spectrum:
    k_max = system.n if k_max is None else k_max
    if not 1 <= k_max <= system.n:
        raise ValueError(f"k_max={k_max} exceeds truncation n={system.n}")
    try:
        lam, vec = eigh(system.linear_stiffness, system.massY)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
        raise np.linalg.LinAlgError(f"mass matrix factorization failed: {exc}") from exc
    dom = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[dom, np.arange(vec.shape[1])])
    return Spectrum(lam[:k_max], vec[:, :k_max], dom[:k_max] + 1)


def flat_cable_eigenvalue(params: BridgeParams, k: int) -> float:
    """Closed-form eigenvalue for a horizontal cable (``s' = s'' = 0``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    L = params.L
    kp = k * math.pi
    return (params.EI * kp**4 + 2.0 * params.H0 * kp**2 * L**2) / ((params.M + 2 * params.m) * L**4)


def sample_deck(system: GalerkinSystem, Y, x) -> np.ndarray:
    """Deck displacement ``y(x)`` for coefficient vector(s) ``Y`` (last axis n)."""
    e = np.sin(np.outer(system.wavenumbers, np.atleast_1d(x)))
    return np.asarray(Y) @ e


def write_tensors_csv(system: GalerkinSystem, path) -> None:
    """Debug dump of all coefficient tensors, one row per entry."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "i", "j", "k", "value"])
        for name in ("massY", "massTheta", "bendY", "stiffTorsion", "Q", "D"):
            a = getattr(system, name)
            for (i, j), val in np.ndenumerate(a):
                w.writerow([name, i + 1, j + 1, "", repr(float(val))])
        for i, val in enumerate(system.v):
            w.writerow(["v", i + 1, "", "", repr(float(val))])
        for (i, j, k), val in np.ndenumerate(system.C):
            w.writerow(["C", i + 1, j + 1, k + 1, repr(float(val))])
