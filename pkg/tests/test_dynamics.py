import csv

import numpy as np
import pytest

from bridgestab import dynamics, galerkin
from bridgestab.dynamics import State


@pytest.fixture(scope="module")
def start(sys10):
    spectrum = galerkin.linear_spectrum(sys10)
    lam, phi = spectrum.branch_eigenpair(4)
    Y0 = 2.0 * phi / np.max(np.abs(phi))  # ~2 m deflection, well into the nonlinear regime
    return Y0, 2 * np.pi / np.sqrt(lam)


def test_energy_conserved(sys10, start):
    Y0, T = start
    tr = dynamics.integrate(sys10, State(0.0, Y0, np.zeros(10)), 5 * T, samples=101)
    assert tr.energy_drift < 5e-9
    assert tr.Y.shape == (101, 10)


def test_time_reversal(sys10, start):
    Y0, T = start
    V0 = 0.1 * np.roll(Y0, 1)
    Y1, V1 = dynamics.transfer_map(sys10, Y0, V0, 2 * T)
    Yb, Vb = dynamics.transfer_map(sys10, Y1, -V1, 2 * T)
    assert np.max(np.abs(Yb - Y0)) < 1e-7 * np.max(np.abs(Y0))
    assert np.max(np.abs(Vb + V0)) < 1e-7 * np.max(np.abs(Y0)) / T


def test_linear_limit_is_harmonic(sys10):
    spectrum = galerkin.linear_spectrum(sys10)
    lam, phi = spectrum.branch_eigenpair(2)
    w = np.sqrt(lam)
    a = 1e-6
    t = np.linspace(0, 2 * np.pi / w, 9)
    tr = dynamics.integrate(sys10, State(0.0, a * phi, np.zeros(10)), t[-1], samples=t)
    expected = a * np.cos(w * t)[:, None] * phi[None, :]
    assert np.max(np.abs(tr.Y - expected)) < 1e-5 * a


def test_self_convergence(sys10, start):
    Y0, T = start
    coarse = dynamics.transfer_map(sys10, Y0, np.zeros(10), T, tol=1e-9)[0]
    fine = dynamics.transfer_map(sys10, Y0, np.zeros(10), T, tol=1e-12)[0]
    assert np.max(np.abs(coarse - fine)) < 1e-6 * np.max(np.abs(Y0))


def test_variational_jacobian(sys10, start):
    Y0, T = start
    V0 = np.zeros(10)
    Yt, Vt, J = dynamics.flow_with_jacobian(sys10, Y0, V0, 0.3 * T)
    h = 1e-5
    for col in (0, 3, 12):
        e = np.zeros(20)
        e[col] = h
        plus = np.concatenate(dynamics.transfer_map(sys10, Y0 + e[:10], V0 + e[10:], 0.3 * T, tol=1e-12))
        minus = np.concatenate(dynamics.transfer_map(sys10, Y0 - e[:10], V0 - e[10:], 0.3 * T, tol=1e-12))
        fd = (plus - minus) / (2 * h)
        np.testing.assert_allclose(J[:, col], fd, rtol=1e-5, atol=1e-6 * np.max(np.abs(fd)))
    sub = dynamics.flow_with_jacobian(sys10, Y0, V0, 0.3 * T, columns=[3])[2]
    # different step sequences: agreement at the integrator tolerance, not bitwise
    np.testing.assert_allclose(sub[:, 0], J[:, 3], rtol=1e-7, atol=1e-9 * np.max(np.abs(J[:, 3])))


def test_half_period_period_derivative(sys10, start):
    Y0, T = start
    _, _, dVdT = dynamics.half_period_residual(sys10, Y0, T)
    h = 1e-6 * T
    vp = dynamics.half_period_velocity(sys10, Y0, T + h, tol=1e-12)
    vm = dynamics.half_period_velocity(sys10, Y0, T - h, tol=1e-12)
    np.testing.assert_allclose(dVdT, (vp - vm) / (2 * h), rtol=1e-5, atol=1e-8 * np.max(np.abs(dVdT)))


def test_accel_matches_mass_solve(sys10, start):
    Y0, _ = start
    flow = dynamics.get_flow(sys10)
    direct = np.linalg.solve(sys10.massY, galerkin.force(sys10, Y0))
    np.testing.assert_allclose(flow.accel(Y0), direct, rtol=1e-10, atol=1e-12 * np.max(np.abs(direct)))
    np.testing.assert_allclose(galerkin.acceleration(sys10, Y0), direct, rtol=1e-10, atol=1e-12 * np.max(np.abs(direct)))


def test_rest_is_fixed(sys10):
    assert np.all(dynamics.half_period_velocity(sys10, np.zeros(10), 3.0) == 0)
    Y, V = dynamics.transfer_map(sys10, np.zeros(10), np.zeros(10), 3.0)
    assert np.all(Y == 0) and np.all(V == 0)


def test_validation(sys10):
    z = np.zeros(10)
    with pytest.raises(ValueError):
        dynamics.integrate(sys10, State(0.0, z, z), 1.0, tol=1e-3)
    with pytest.raises(ValueError):
        dynamics.integrate(sys10, State(1.0, z, z), 0.5)
    with pytest.raises(ValueError):
        dynamics.transfer_map(sys10, z, z, 0.0)


def test_trajectory_csv(tmp_path, sys10, start):
    Y0, T = start
    tr = dynamics.integrate(sys10, State(0.0, Y0, np.zeros(10)), T, samples=5)
    path = tmp_path / "traj.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0][0] == "t" and rows[0][-1] == "energy"
    assert len(rows) == 6 and len(rows[1]) == 22
