import dataclasses
import math

import numpy as np
import pytest

from lastlook import experiments, hjb, protocols
from lastlook.config import GridSpec, Protocol, preset
from lastlook.errors import InvariantViolation, OffGrid, StabilityViolation
from lastlook.hjb import ASK, BID, ValueSurface

SMALL = GridSpec(q_max=40, r_points=11, dt=1e-5)


def test_flow_free_decay():
    params = preset("base").with_buckets(base_intensity=1e-300).with_reputation(flow_decay=0.1)
    sol = hjb.solve_horizon(params, SMALL)
    q = sol.value.q_nodes.astype(float)
    expected = -0.5 * params.gamma * params.sigma ** 2 * q ** 2 * params.horizon
    assert np.allclose(sol.value.values, expected[:, None], rtol=1e-12, atol=1e-280)


def test_one_step_from_zero():
    params = preset("base").with_reputation(flow_decay=0.1)
    surf = ValueSurface(SMALL.q_nodes, SMALL.r_nodes, np.zeros((len(SMALL.q_nodes), len(SMALL.r_nodes))))
    out = hjb.step_backward(surf, params, SMALL)
    h = sum(protocols.hamiltonian(params.protocol, b, nu, protocols.ShadowState()).value
            for b, nu in zip(params.buckets, params.nus))
    assert out.at(0, 0.0) == pytest.approx(SMALL.dt * 2 * h, rel=1e-9)
    assert out.t == -SMALL.dt


def test_stability_violation():
    params = preset("base")
    with pytest.raises(StabilityViolation):
        hjb.solve_horizon(params, dataclasses.replace(SMALL, dt=1e-2), horizon=0.02)


def test_quadratic_surface_marginals():
    params = preset("table1_tau1s")
    grid = GridSpec(q_max=30)
    q = grid.q_nodes.astype(float)
    A = 0.004
    surf = ValueSurface(grid.q_nodes, np.array([0.0]), (-A * q ** 2)[:, None])
    pol = hjb.extract_policy(surf, params, grid)
    for n, z in enumerate(params.sizes):
        i = np.flatnonzero(pol.valid[n, BID, :, 0])
        assert np.allclose(pol.p[n, BID, i, 0], A * (z + 2 * q[i]), rtol=1e-12, atol=1e-15)
    assert np.all(pol.J == 0.0)


def test_r_independent_surface_has_zero_J():
    params = preset("feedback_rho01")
    q = SMALL.q_nodes.astype(float)
    V = np.repeat((-0.01 * q ** 2)[:, None], len(SMALL.r_nodes), axis=1)
    pol = hjb.extract_policy(ValueSurface(SMALL.q_nodes, SMALL.r_nodes, V), params, SMALL)
    assert np.all(pol.J == 0.0)


def test_mirror_symmetry(feedback_solution):
    pol = feedback_solution.policy
    assert np.array_equal(pol.delta[:, BID], pol.delta[:, ASK, ::-1], equal_nan=True)
    assert np.array_equal(pol.control[:, BID], pol.control[:, ASK, ::-1], equal_nan=True)
    V = feedback_solution.value.values
    assert np.array_equal(V, V[::-1])


def test_rejection_penalty_nonpositive_and_value_monotone(feedback_solution):
    pol = feedback_solution.policy
    assert np.max(pol.J) <= 1e-9
    V = feedback_solution.value.values
    assert np.all(np.diff(V, axis=1) <= 1e-9)
    assert feedback_solution.positive_J_nodes == 0


def test_feedback_reputation_fixed_point(feedback_solution):
    R = hjb.stationary_reputation(feedback_solution.policy)
    assert R == pytest.approx(0.03, abs=0.005)
    r = float(hjb._interp_r(feedback_solution.policy.r_nodes,
                            feedback_solution.policy.rejection_rate()[len(feedback_solution.policy.q_nodes) // 2], R))
    assert r == pytest.approx(R, abs=1e-12)


@pytest.mark.parametrize("model,rho_g,spread,threshold,rejection", [
    ("no_rejection", 0.0, 0.89, math.inf, 0.0),
    ("unconstrained", 0.0, 0.53, 0.25, 0.33),
    ("symmetric", 0.10, 0.78, 0.55, 0.09),
    ("symmetric", 0.15, 0.81, 0.61, 0.07),
])
def test_table_rows(model, rho_g, spread, threshold, rejection):
    row = experiments.table1_row(model, rho_g)
    assert row.spread_bp == pytest.approx(spread, abs=0.03)
    assert row.threshold_bp == pytest.approx(threshold, abs=0.03)
    assert row.rejection == pytest.approx(rejection, abs=0.02)


def test_clean_spread():
    params = dataclasses.replace(preset("base"), protocol=Protocol.NONE).with_buckets(toxicity=0.0)
    m = hjb.report_metrics(hjb.solve_horizon(params, GridSpec()))
    assert m.spread == pytest.approx(0.69, abs=0.01)


def test_thresholds_deep_and_monotone():
    rows = experiments.thresholds_vs_q(q_span=20)
    bid = np.array([r[1] for r in rows])
    ask = np.array([r[2] for r in rows])
    assert np.all(np.diff(bid) < 0) and np.all(np.diff(ask) > 0)
    assert np.allclose(bid, ask[::-1], rtol=0, atol=0)


def test_report_metrics_errors(feedback_solution):
    with pytest.raises(OffGrid):
        hjb.report_metrics(feedback_solution, q=10_000)
    with pytest.raises(OffGrid):
        hjb.report_metrics(feedback_solution, R=1.5)


def test_generator_and_occupancy(feedback_solution):
    params = feedback_solution.params
    pol = feedback_solution.policy
    Q = hjb.generator(pol, params)
    assert np.max(np.abs(np.asarray(Q.sum(axis=1)).ravel())) <= 1e-9 * np.max(np.abs(Q.diagonal()))
    pi = hjb.stationary_occupancy(pol, params)
    assert pi.min() >= 0 and pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(pi, pi[::-1], atol=1e-10)
    assert np.max(np.abs(Q.T @ pi.ravel())) <= 1e-8 * np.max(np.abs(Q.diagonal()))
    p0 = hjb.transient_occupancy(pol, params, 0.0, q0=0, R0=0.05)
    assert p0.sum() == pytest.approx(1.0)
    assert hjb.mean_reputation(p0, pol.r_nodes) == pytest.approx(0.05, abs=1e-12)


def test_generator_needs_reputation_lattice():
    params = preset("table1_tau1s")
    sol = hjb.solve_horizon(params, GridSpec(q_max=30), horizon=0.001)
    with pytest.raises(InvariantViolation):
        hjb.generator(sol.policy, params)
