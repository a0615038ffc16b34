"""Time integration of the semi-discrete deck equations ``Y'' = G(Y)``."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import galerkin
from .galerkin import GalerkinSystem

DEFAULT_TOL = 1e-11
METHOD = "DOP853"


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class State:
    t: float
    Y: np.ndarray
    V: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray
    Y: np.ndarray  # (samples, n)
    V: np.ndarray
    energy: np.ndarray
    nfev: int = 0
    steps: int = 0
    tol: float = DEFAULT_TOL
    stats: dict = field(default_factory=dict)

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        if e0 == 0.0:
            return float(np.max(np.abs(self.energy)))
        return float(np.max(np.abs(self.energy - e0)) / abs(e0))

    def write_csv(self, path) -> None:
        n = self.Y.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y_{i + 1}" for i in range(n)] + [f"v_{i + 1}" for i in range(n)] + ["energy"])
            for t, y, v, e in zip(self.t, self.Y, self.V, self.energy):
                w.writerow([repr(float(t)), *map(repr, map(float, y)), *map(repr, map(float, v)), repr(float(e))])


class Flow:
    """Right-hand sides of the flow and of its variational equations.

    Holds dense copies of the mass-reduced operators so each evaluation is a
    handful of small matrix products.
    """

    def __init__(self, system: GalerkinSystem):
        self.system = system
        p = system.params
        n = system.n
        self.n = n
        Minv = np.linalg.inv(system.massY)
        Minv = 0.5 * (Minv + Minv.T)
        self.Minv = Minv
        c = p.cable_stiffness
        self.c = c
        self.H0 = p.H0
        self.lin = Minv @ (system.bendY + 2.0 * p.H0 * system.Q)
        self.C2 = system.C.reshape(n, n * n)
        self.Cflat = system.C.reshape(n * n, n)
        self.D = system.D
        self.v = system.v

    def force(self, Y):
        DY = self.D @ Y
        vY = self.v @ Y
        quad = self.C2 @ np.outer(Y, Y).ravel()
        return -3.0 * self.H0 * quad - self.c * (Y @ DY) * self.v - 2.0 * self.c * vY * (self.v + DY)

    def accel(self, Y):
        return -self.lin @ Y + self.Minv @ self.force(Y)

    def rhs(self, t, u):
        n = self.n
        Y = u[:n]
        return np.concatenate((u[n:], self.accel(Y)))

    def jac_accel(self, Y):
        """Jacobian of the acceleration ``dG/dY``."""
        n = self.n
        DY = self.D @ Y
        v = self.v
        H = 6.0 * self.H0 * (self.Cflat @ Y).reshape(n, n) + 2.0 * self.c * (
            np.outer(v, DY) + np.outer(DY, v) + (v @ Y) * self.D
        )
        return -self.lin - self.Minv @ (H + 2.0 * self.c * np.outer(v, v))

    def rhs_var(self, t, u):
        """Flow plus variational equations; ``u = [Y, V, vec(dY), vec(dV)]``."""
        n = self.n
        Y = u[:n]
        m = (u.size - 2 * n) // (2 * n)
        dY = u[2 * n : 2 * n + n * m].reshape(n, m)
        dV = u[2 * n + n * m :].reshape(n, m)
        J = self.jac_accel(Y)
        return np.concatenate((u[n : 2 * n], self.accel(Y), dV.ravel(), (J @ dY).ravel()))

    def energy(self, Y, V):
        return 0.5 * V @ self.system.massY @ V + galerkin.potential_energy(self.system, Y)


_FLOWS: dict[int, Flow] = {}


def get_flow(system: GalerkinSystem) -> Flow:
    key = id(system)
    flow = _FLOWS.get(key)
    if flow is None or flow.system is not system:
        flow = Flow(system)
        _FLOWS[key] = flow
    return flow


def _atol(tol, Y0, V0, T):
    scale = max(np.max(np.abs(Y0), initial=0.0), np.max(np.abs(V0), initial=0.0) * T / (2 * np.pi))
    return tol * max(scale, 1e-6)


def _check_tol(tol):
    if not 1e-13 <= tol <= 1e-6:
        raise ValueError(f"tol must lie in [1e-13, 1e-6], got {tol}")


def _solve(fun, t_span, u0, tol, atol, t_eval=None, dense=False):
    sol = solve_ivp(
        fun, t_span, u0, method=METHOD, rtol=tol, atol=atol, t_eval=t_eval, dense_output=dense
    )
    if sol.status != 0:
        raise IntegrationError(sol.message)
    if not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationError("non-finite state")
    return sol


def total_energy(system: GalerkinSystem, state: State) -> float:
    """Kinetic plus potential energy (J) of a deck state."""
    return galerkin.kinetic_energy(system, state.V) + galerkin.potential_energy(system, state.Y)


def integrate(
    system: GalerkinSystem,
    state0: State,
    t_end: float,
    tol: float = DEFAULT_TOL,
    samples=None,
) -> Trajectory:
    """Integrate from ``state0`` to ``t_end``.

    ``samples`` is an int (uniform samples including both ends) or an array
    of output times; by default only the end points are returned.
    """
    _check_tol(tol)
    if not t_end > state0.t:
        raise ValueError("t_end must exceed the initial time")
    flow = get_flow(system)
    Y0 = np.asarray(state0.Y, dtype=float)
    V0 = np.asarray(state0.V, dtype=float)
    if samples is None:
        t_eval = np.array([state0.t, t_end])
    elif np.isscalar(samples):
        t_eval = np.linspace(state0.t, t_end, int(samples))
    else:
        t_eval = np.asarray(samples, dtype=float)
    u0 = np.concatenate((Y0, V0))
    sol = _solve(flow.rhs, (state0.t, t_end), u0, tol, _atol(tol, Y0, V0, t_end - state0.t), t_eval)
    n = system.n
    Y = sol.y[:n].T
    V = sol.y[n:].T
    energy = np.array([flow.energy(y, v) for y, v in zip(Y, V)])
    return Trajectory(sol.t, Y, V, energy, nfev=sol.nfev, steps=sol.nfev // 12, tol=tol)


def transfer_map(system: GalerkinSystem, Y0, V0, T: float, tol: float = DEFAULT_TOL):
    """``(Y(T), V(T))`` of the trajectory through ``(Y0, V0)``."""
    if not T > 0:
        raise ValueError("T must be positive")
    _check_tol(tol)
    flow = get_flow(system)
    Y0 = np.asarray(Y0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    sol = _solve(flow.rhs, (0.0, T), np.concatenate((Y0, V0)), tol, _atol(tol, Y0, V0, T))
    end = sol.y[:, -1]
    return end[: system.n].copy(), end[system.n :].copy()


def flow_with_jacobian(system: GalerkinSystem, Y0, V0, T: float, tol: float = DEFAULT_TOL, columns=None):
    """Transfer map and its Jacobian from the variational equations.

    ``columns`` selects which initial directions to propagate (indices into
    the 2n state); the Jacobian returned is ``(2n, len(columns))``.
    """
    _check_tol(tol)
    flow = get_flow(system)
    n = system.n
    cols = np.arange(2 * n) if columns is None else np.asarray(columns)
    E = np.eye(2 * n)[:, cols]
    Y0 = np.asarray(Y0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    u0 = np.concatenate((Y0, V0, E[:n].ravel(), E[n:].ravel()))
    atol = np.full(u0.size, _atol(tol, Y0, V0, T))
    atol[2 * n :] = tol
    sol = _solve(flow.rhs_var, (0.0, T), u0, tol, atol)
    end = sol.y[:, -1]
    m = cols.size
    J = np.vstack((end[2 * n : 2 * n + n * m].reshape(n, m), end[2 * n + n * m :].reshape(n, m)))
    return end[:n].copy(), end[n : 2 * n].copy(), J


def half_period_velocity(system: GalerkinSystem, Y0, T: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Velocity at ``T/2`` of the trajectory released from rest at ``Y0``."""
    Y0 = np.asarray(Y0, dtype=float)
    if not np.any(Y0):
        return np.zeros_like(Y0)
    return transfer_map(system, Y0, np.zeros_like(Y0), 0.5 * T, tol)[1]


def half_period_residual(system: GalerkinSystem, Y0, T: float, tol: float = DEFAULT_TOL):
    """``V(T/2)`` from rest at ``Y0``, its Jacobian in ``Y0`` and its derivative in ``T``."""
    n = system.n
    Y0 = np.asarray(Y0, dtype=float)
    Yh, Vh, J = flow_with_jacobian(system, Y0, np.zeros(n), 0.5 * T, tol, columns=np.arange(n))
    dVdT = 0.5 * get_flow(system).accel(Yh)
    return Vh, J[n:], dVdT
