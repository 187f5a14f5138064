import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastlook import kernels
from lastlook.errors import NonPositiveNu, NoSignChange
from lastlook.kernels import Bracket, find_root, maximize_1d, norm_cdf, norm_pdf, psi


def test_norm_cdf_examples():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    tail = norm_cdf(-40.0)
    assert 0.0 <= tail < 1e-300


def test_norm_cdf_against_erfc_oracle():
    xs = np.linspace(-8, 8, 321)
    oracle = np.array([0.5 * math.erfc(-x / math.sqrt(2.0)) for x in xs])
    assert np.max(np.abs(norm_cdf(xs) - oracle)) <= 1e-12


@settings(max_examples=200)
@given(st.floats(-30, 30))
def test_norm_cdf_symmetry_and_range(x):
    a, b = norm_cdf(x), norm_cdf(-x)
    assert 0.0 <= a <= 1.0
    assert abs(a + b - 1.0) <= 1e-15


def test_norm_pdf_examples():
    assert norm_pdf(0.0) == pytest.approx(0.39894228040, abs=1e-11)
    assert norm_pdf(1.0) == pytest.approx(0.24197072452, abs=1e-11)
    assert norm_pdf(2.3) == norm_pdf(-2.3)


def test_psi_examples():
    assert psi(0.0, 1.0) == pytest.approx(0.39894228, abs=1e-8)
    assert psi(1.0, 1.0) == pytest.approx(1.08331547, abs=1e-8)
    assert abs(psi(5.0, 0.01) - 5.0) <= 1e-12


def test_psi_monte_carlo_oracle():
    xi = np.random.default_rng(7).standard_normal(2_000_000)
    payoff = np.maximum(1.0 + xi, 0.0)
    se = payoff.std() / math.sqrt(payoff.size)
    assert abs(payoff.mean() - psi(1.0, 1.0)) <= 3 * se


@pytest.mark.parametrize("nu", [0.0, -1.0, float("nan")])
def test_psi_rejects_nonpositive_nu(nu):
    with pytest.raises(NonPositiveNu):
        psi(0.1, nu)


@settings(max_examples=300)
@given(st.floats(-20, 20), st.floats(1e-3, 10))
def test_psi_bounds(mu, nu):
    v = psi(mu, nu)
    assert v > 0 or mu < -30 * nu
    assert v >= max(mu, 0.0) - 1e-12


@settings(max_examples=200)
@given(st.floats(-5, 5), st.floats(0.05, 5))
def test_psi_derivative_is_cdf(mu, nu):
    h = 1e-5
    d = (psi(mu + h, nu) - psi(mu - h, nu)) / (2 * h)
    assert d == pytest.approx(norm_cdf(mu / nu), abs=1e-7)


def test_find_root_examples():
    assert find_root(lambda x: x - 2.0, Bracket(0.0, 5.0)) == pytest.approx(2.0, abs=1e-12)
    assert find_root(lambda x: norm_cdf(x) - 0.5, Bracket(-3.0, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_find_root_myopic_foc():
    kn = 3.0 * 0.2406

    def resid(x):
        return norm_cdf(x) - kn * kernels.psi_std(x)

    x = find_root(resid, Bracket(-1.0, 5.0))
    grid = np.linspace(-1.0, 5.0, 200001)
    r = norm_cdf(grid) - kn * kernels.psi_std(grid)
    crossings = np.flatnonzero(np.diff(np.sign(r)) != 0)
    assert crossings.size == 1
    assert abs(grid[crossings[0]] - x) <= 1e-4


def test_find_root_no_sign_change():
    with pytest.raises(NoSignChange):
        find_root(lambda x: x * x + 1.0, Bracket(-1.0, 1.0))


def test_bracket_order():
    with pytest.raises(ValueError):
        Bracket(1.0, 1.0)


def test_maximize_examples():
    x, f = maximize_1d(lambda d: d * math.exp(-3 * d), Bracket(0.0, 5.0))
    assert x == pytest.approx(1 / 3, abs=1e-6)
    assert f == pytest.approx(math.exp(-1) / 3, abs=1e-12)
    x, _ = maximize_1d(lambda x: -(x - 1.0) ** 2, Bracket(0.0, 3.0))
    assert x == pytest.approx(1.0, abs=1e-6)


def test_maximize_two_bumps():
    def f(x):
        return math.exp(-((x - 1.0) / 0.3) ** 2) + 1.2 * math.exp(-((x - 4.0) / 0.3) ** 2)

    x, fx = maximize_1d(f, Bracket(0.0, 5.0))
    assert x == pytest.approx(4.0, abs=1e-5)
    assert fx == pytest.approx(1.2, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3))
def test_maximize_quadratic_property(c, w):
    x, _ = maximize_1d(lambda x: -((x - c) / w) ** 2, Bracket(-5.0, 5.0))
    assert abs(x - c) <= 1e-5
    assert -5.0 <= x <= 5.0


def test_vectorized_helpers():
    c = np.array([0.1, 0.5, 2.0])
    root = kernels.bisect_vec(lambda x: x - c, np.zeros(3), np.full(3, 3.0))
    assert np.allclose(root, c, atol=1e-14)
    xm = kernels.golden_max_vec(lambda x: -(x - c) ** 2, np.zeros(3), np.full(3, 3.0))
    assert np.allclose(xm, c, atol=1e-7)
    xg = kernels.grid_max_vec(lambda x: -(x - c) ** 2, np.zeros(3), np.full(3, 3.0))
    assert np.allclose(xg, c, atol=1e-7)
