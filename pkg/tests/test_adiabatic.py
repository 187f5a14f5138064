import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastlook import adiabatic, hjb
from lastlook.config import GridSpec, Protocol, preset
from lastlook.errors import DegenerateSigma, QuoteDependentToxicity


@pytest.fixture(scope="module")
def feedback():
    return preset("feedback_rho01")


def test_riccati_identities():
    assert adiabatic.riccati_stationary(0.0, 100.0, 1.0, 5.0) == 0.0
    sigma, g, Sigma = 100.0, 0.9, 3.0
    gamma = 8 * g * Sigma / sigma ** 2
    assert adiabatic.riccati_stationary(gamma, sigma, g, Sigma) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DegenerateSigma):
        adiabatic.riccati_stationary(1e-3, 100.0, 1.0, 0.0)


def test_riccati_path_reaches_fixed_point():
    params = preset("base")
    sol = adiabatic.solution_at(params, 0.0)
    t, A = adiabatic.riccati_path(params.gamma, params.sigma, sol.g, sol.Sigma, 10.0)
    assert A[0] == pytest.approx(sol.A, abs=1e-8)
    assert A[-1] == 0.0
    assert np.all(np.diff(A) <= 1e-12)


@settings(max_examples=40, deadline=None)
@given(gamma=st.floats(1e-6, 1e-1), sigma=st.floats(1.0, 500.0), g=st.floats(0.05, 1.0),
       Sigma=st.floats(1.0, 1e5))
def test_riccati_root_solves_equation(gamma, sigma, g, Sigma):
    A = adiabatic.riccati_stationary(gamma, sigma, g, Sigma)
    assert A > 0
    assert 4 * g * Sigma * A * A == pytest.approx(0.5 * gamma * sigma * sigma, rel=1e-12)


def test_solution_invariants(feedback):
    sol = adiabatic.solution_at(feedback, -0.1, R=0.03)
    assert sol.A > 0 and sol.Sigma > 0 and sol.J <= 0
    assert sol.Sigma == pytest.approx(sum(b.h_pp for b in sol.buckets))
    assert 0 <= sol.r_bar <= 1


def test_classical_myopic_limit():
    b = preset("base").with_buckets(toxicity=0.0).buckets[0]
    m = adiabatic.myopic_optimize(b, 1e-7, 0.0, "unconstrained")
    assert m.delta_bar == pytest.approx(1 / 3, abs=1e-6)
    assert m.accept_prob == pytest.approx(1.0, abs=1e-9)


def test_fair_dominated_by_unconstrained(feedback):
    for J in (0.0, -0.1, -0.5):
        u = adiabatic.myopic_ladder(feedback, J, "unconstrained")
        f = adiabatic.myopic_ladder(feedback, J, "fair")
        for bu, bf in zip(u, f):
            assert bf.h0 <= bu.h0 + 1e-9
            assert bf.eps_bar is not None and bf.eps_bar > 0


def test_quote_dependent_rejected():
    params = preset("quote_dependent_beta05")
    with pytest.raises(QuoteDependentToxicity):
        adiabatic.myopic_ladder(params, 0.0)


def test_rbar_monotone_in_J(feedback):
    J = np.linspace(-2.0, 0.0, 21)
    r = np.array([adiabatic.rbar_of_J(feedback, j) for j in J])
    assert np.all(np.diff(r) > 0)


def test_calibrate_J(feedback):
    r0 = adiabatic.rbar_of_J(feedback, 0.0)
    at = adiabatic.calibrate_J(feedback, r0)
    assert at.J == 0.0 and not at.saturated
    above = adiabatic.calibrate_J(feedback, min(1.0, r0 + 0.1))
    assert above.J == 0.0 and above.saturated
    mid = adiabatic.calibrate_J(feedback, 0.5 * r0)
    assert mid.J < 0 and mid.r_bar == pytest.approx(0.5 * r0, abs=1e-10)
    zero = adiabatic.calibrate_J(feedback, 0.0)
    assert zero.saturated and zero.r_bar < 1e-6


def test_approx_controls_symmetry(feedback):
    sol = adiabatic.stationary_reputation(feedback)
    q0 = adiabatic.approx_controls(sol, 0.0)
    for z, qs, b in zip(sol.sizes, q0, sol.buckets):
        assert qs.bid == qs.ask == pytest.approx(b.delta_bar + sol.A * z)
    for q in (3.0, 17.0):
        plus, minus = adiabatic.approx_controls(sol, q), adiabatic.approx_controls(sol, -q)
        for a, b in zip(plus, minus):
            assert a.bid == b.ask and a.ask == b.bid and a.threshold == b.threshold
    table = adiabatic.quote_table(sol, np.arange(-5, 6))
    assert table.shape == (5, 2, 11)
    assert table[0, 0, 5] == pytest.approx(q0[0].bid)


def test_stationary_reputation(feedback):
    sol = adiabatic.stationary_reputation(feedback)
    assert sol.R == pytest.approx(0.03, abs=0.005)
    assert abs(sol.r_bar - sol.R) < 1e-6
    decoupled = adiabatic.stationary_reputation(feedback.with_reputation(flow_decay=0.0))
    assert decoupled.J == 0.0
    assert decoupled.R == pytest.approx(adiabatic.rbar_of_J(feedback, 0.0), abs=1e-6)


def test_adiabatic_tracks_exact(feedback, feedback_solution):
    approx = adiabatic.stationary_reputation(feedback)
    exact = hjb.stationary_reputation(feedback_solution.policy)
    assert approx.R == pytest.approx(exact, abs=0.002)


def test_policy_surface(feedback):
    grid = GridSpec(q_max=40, r_points=11)
    pol = adiabatic.policy_surface(feedback, grid)
    assert pol.delta.shape == (5, 2, 81, 11)
    assert np.array_equal(pol.delta[:, 0], pol.delta[:, 1, ::-1], equal_nan=True)
    assert np.all(np.isnan(pol.delta[4, 0, -20:]))
    assert np.all(pol.J <= 0)
    R = hjb.stationary_reputation(pol)
    assert R == pytest.approx(adiabatic.stationary_reputation(feedback).R, abs=2e-3)
