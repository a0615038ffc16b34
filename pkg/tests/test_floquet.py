import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.special import mathieu_a, mathieu_b

from bridgestab import floquet, modes
from bridgestab.floquet import TorsionalSystem


class HillSystem(TorsionalSystem):
    """Scalar or matrix Hill equation with a prescribed coefficient."""

    def __init__(self, coeff, T, nu=1):
        super().__init__(None, modes.PeriodicMode(0, T, np.zeros(1), 0.0, 0.0, 0.0, 1), nu, T,
                         np.eye(nu), np.arange(256) * T / 256, np.zeros((256, 1)))
        self.coeff = coeff

    def Xi(self, t):
        return np.atleast_2d(self.coeff(t))


def _product_monodromy(coeff, T, nu, steps=4000):
    # midpoint products of exact exponentials, an independent discretisation
    h = T / steps
    M = np.eye(2 * nu)
    for i in range(steps):
        Xi = np.atleast_2d(coeff((i + 0.5) * h))
        A = np.block([[np.zeros((nu, nu)), np.eye(nu)], [-Xi, np.zeros((nu, nu))]])
        M = expm(A * h) @ M
    return M


@pytest.fixture(scope="module")
def branch3(sys10):
    return modes.continue_branch(sys10, 3, E_max=3e6)


def test_rest_state_matches_matrix_exponential(sys10):
    T = 2.3
    ts = floquet.assemble_torsional(sys10, floquet.zero_mode(sys10, T), 4)
    res = floquet.monodromy(ts)
    Xi = ts.Xi(0.0)
    A = np.block([[np.zeros((4, 4)), np.eye(4)], [-Xi, np.zeros((4, 4))]])
    np.testing.assert_allclose(res.matrix, expm(A * T), atol=1e-9)
    assert res.ER == pytest.approx(1.0, abs=1e-9)


def test_rest_state_gammas(sys10, tnb, profile):
    ts = floquet.assemble_torsional(sys10, floquet.zero_mode(sys10), 2)
    g1, g2 = floquet.gamma_coefficients(tnb, profile)
    np.testing.assert_allclose(np.diag(ts.Xi(0.0)), [g1, g2], rtol=1e-10)
    assert abs(ts.Xi(0.0)[0, 1]) < 1e-10 * g1


@pytest.mark.parametrize("a,q", [(1.0, 0.2), (4.0, 0.8), (0.95, 0.15)])
def test_mathieu_unstable(a, q):
    coeff = lambda t: a - 2 * q * math.cos(2 * t)
    res = floquet.monodromy(HillSystem(coeff, math.pi), method="interpolated")
    oracle = _product_monodromy(coeff, math.pi, 1)
    rho = np.max(np.abs(np.linalg.eigvals(oracle)))
    assert rho > 1.0 + 1e-3
    assert res.ER == pytest.approx(rho ** (1 / math.pi), rel=1e-6)


@pytest.mark.parametrize("a,q", [(2.5, 0.3), (0.3, 0.2), (6.0, 0.5)])
def test_mathieu_stable(a, q):
    # stability regions from the tabulated characteristic values
    for r in range(4):
        lo = mathieu_a(r, q) if r else -np.inf
        hi = mathieu_b(r + 1, q)
        if lo < a < hi:
            break
    else:
        pytest.fail("parameters not in a stable interval")
    res = floquet.monodromy(HillSystem(lambda t: a - 2 * q * math.cos(2 * t), math.pi), method="interpolated")
    assert res.ER == pytest.approx(1.0, abs=1e-8)
    assert res.det == pytest.approx(1.0, abs=1e-9)


def test_matrix_hill_against_products():
    B = np.array([[2.0, 0.4], [0.4, 5.0]])
    coeff = lambda t: B + np.array([[0.6 * math.cos(t), 0.3 * math.sin(2 * t)], [0.3 * math.sin(2 * t), -0.5 * math.cos(t)]])
    T = 2 * math.pi
    res = floquet.monodromy(HillSystem(coeff, T, nu=2), method="interpolated")
    oracle = _product_monodromy(coeff, T, 2)
    np.testing.assert_allclose(res.matrix, oracle, atol=2e-6)


def test_mode_monodromy_is_symplectic(sys10, branch3):
    m = branch3.modes[-1]
    res = floquet.mode_expansion_rate(sys10, m)
    assert abs(res.det - 1.0) < 1e-8
    assert res.reciprocity_error() < 1e-6
    assert res.conjugation_error() < 1e-9
    assert res.ER >= 1.0 - 1e-12


def test_coupled_and_interpolated_agree(sys10, branch3):
    ts = floquet.assemble_torsional(sys10, branch3.modes[-1], 4)
    a = floquet.monodromy(ts, method="coupled")
    b = floquet.monodromy(ts, method="interpolated")
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-7)
    with pytest.raises(ValueError):
        floquet.monodromy(ts, method="euler")


def test_small_mode_close_to_rest(sys10, branch3):
    res = floquet.mode_expansion_rate(sys10, branch3.modes[0])
    assert res.ER - 1.0 < 1e-6


def test_expansion_rate_scaling():
    assert floquet.expansion_rate_from([0.5, 4.0, 0.25], 2.0) == pytest.approx(2.0)
    assert floquet.expansion_rate_from([1j, -1j], 3.0) == pytest.approx(1.0)


def test_zhukovskii_boundaries():
    T = 1.0
    p = np.full(10, (2.5 * math.pi) ** 2)
    assert floquet.zhukovskii_test(p, T) == ("stable", 2)
    assert floquet.zhukovskii_test(np.array([4.0, 10.0]) * math.pi**2, T) == ("inconclusive", None)
    assert floquet.zhukovskii_test(np.array([-1.0, 1.0]), T)[0] == "inconclusive"
    # touching both ends of one interval still counts
    assert floquet.zhukovskii_test(np.array([1.0, 4.0]) * math.pi**2, T) == ("stable", 1)
    with pytest.raises(ValueError):
        floquet.zhukovskii_test(np.array([np.nan]), T)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 3), lo=st.floats(0.05, 0.45), width=st.floats(0.0, 0.45), phase=st.floats(0, 6.28))
def test_zhukovskii_stable_means_bounded(n, lo, width, phase):
    T = 1.0
    a = ((n + 0.05 + lo) * math.pi) ** 2
    b = ((n + 0.05 + min(lo + width, 0.9)) * math.pi) ** 2
    coeff = lambda t: 0.5 * (a + b) + 0.5 * (b - a) * math.cos(2 * math.pi * t / T + phase)
    samples = np.array([coeff(t) for t in np.linspace(0, T, 200)])
    verdict, idx = floquet.zhukovskii_test(samples, T)
    assert verdict == "stable" and idx == n
    res = floquet.monodromy(HillSystem(coeff, T), method="interpolated")
    assert res.ER == pytest.approx(1.0, abs=1e-7)


def test_nu2_criterion(sys10, branch3):
    rest = floquet.assemble_torsional(sys10, floquet.zero_mode(sys10, 2.0), 2)
    assert floquet.nu2_sufficient_stability(rest) == "stable"
    ts = floquet.assemble_torsional(sys10, branch3.modes[0], 2)
    verdict = floquet.nu2_sufficient_stability(ts)
    assert verdict in ("stable", "inconclusive")
    if verdict == "stable":
        assert floquet.monodromy(ts).ER == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        floquet.nu2_sufficient_stability(floquet.assemble_torsional(sys10, branch3.modes[0], 3))


def test_is_generic():
    assert floquet.is_generic(1.0, 1.0)
    assert not floquet.is_generic(1.0, 2 * math.pi)


def test_find_threshold_synthetic_rates(sys10, branch3):
    n = len(branch3)
    assert not floquet.find_threshold(sys10, branch3, rates=np.ones(n)).found
    first = floquet.find_threshold(sys10, branch3, rates=np.full(n, 1.01))
    assert not first.found and "first point" in first.message
    rates = np.ones(n)
    rates[3:] = 1.01
    th = floquet.find_threshold(sys10, branch3, rates=rates)
    # the true rates are all stable, so bisection walks up to the flagged point
    assert th.found
    assert branch3.energies[2] <= th.energy_J <= branch3.energies[3]
    assert branch3.energies[3] - th.bracket[0].energy <= 0.011 * branch3.energies[3]


def test_find_threshold_in_gap(sys10, branch3):
    br = modes.Branch(3, 10, 1, branch3.params_fingerprint, list(branch3.modes), gaps=[{"after": 2, "component": 9}])
    rates = np.ones(len(br))
    rates[3:] = 1.01
    th = floquet.find_threshold(sys10, br, rates=rates)
    assert th.energy_J == br.energies[3] and "gap" in th.message


def test_validation(sys10, branch3):
    with pytest.raises(ValueError):
        floquet.assemble_torsional(sys10, branch3.modes[0], 11)
    with pytest.raises(ValueError):
        floquet.assemble_torsional(sys10, branch3.modes[0], 10, samples=16)


def test_nu2_criterion_misses_combination_resonance():
    # diagonal entries in different Zhukovskii zones, coupled at omega_1 + omega_2 = 2 pi / T
    T = 1.0
    w2 = 1.2
    w1 = 2 * math.pi / T - w2
    eps = 0.5
    coeff = lambda t: np.array([[w1**2, eps * math.cos(2 * math.pi * t / T)],
                                [eps * math.cos(2 * math.pi * t / T), w2**2]])
    hill = HillSystem(coeff, T, nu=2)
    rho = np.max(np.abs(np.linalg.eigvals(_product_monodromy(coeff, T, 2))))
    assert rho > 1.0 + 1e-3
    assert floquet.monodromy(hill, method="interpolated").ER == pytest.approx(rho ** (1 / T), rel=1e-6)
    assert floquet.nu2_sufficient_stability(hill) == "stable"
    assert floquet.nu2_sufficient_stability(hill, same_interval=True) == "inconclusive"


def test_nu2_same_interval_certifies():
    T = 1.0
    coeff = lambda t: np.array([[12.0 + math.cos(2 * math.pi * t), 0.8 * math.sin(2 * math.pi * t)],
                                [0.8 * math.sin(2 * math.pi * t), 20.0]])
    hill = HillSystem(coeff, T, nu=2)
    assert floquet.nu2_sufficient_stability(hill, same_interval=True) == "stable"
    assert floquet.monodromy(hill, method="interpolated").ER == pytest.approx(1.0, abs=1e-8)
