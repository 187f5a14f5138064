import dataclasses
import math

import numpy as np
import pytest

from lastlook import adiabatic, simulator
from lastlook.config import GridSpec, preset
from lastlook.errors import InvariantViolation, PolicyGridBreach, QuoteDependentToxicity, TooFewPaths
from lastlook.protocols import Decision
from lastlook.simulator import SimConfig, ema_update, simulate

GRID = GridSpec(q_max=60, r_points=21)
HORIZON = 0.01


@pytest.fixture(scope="module")
def fair():
    params = preset("simulation_fair")
    return params, adiabatic.policy_surface(params, GRID)


@pytest.fixture(scope="module")
def clean():
    params = preset("simulation_fair").with_buckets(toxicity=0.0)
    return params, adiabatic.policy_surface(params, GRID)


def test_ema_examples():
    assert ema_update(0.5, Decision.REJECT, 0.01) == pytest.approx(0.505)
    assert ema_update(0.0, Decision.ACCEPT, 0.01) == 0.0
    assert ema_update(1.0, Decision.REJECT, 0.3) == 1.0
    assert ema_update(0.4, Decision.ACCEPT_CAPPED, 0.1) == pytest.approx(0.36)


def test_tilt_compensation():
    params = preset("simulation_fair")
    alpha, lam_adj = simulator.tilt_parameters(params)
    tau = params.buckets[0].latency_days
    var = params.sigma ** 2 * tau
    assert alpha[0] == pytest.approx(params.toxicities[0] / var)
    y = math.sqrt(var) * np.random.default_rng(5).standard_normal(2_000_000)
    w = np.exp(-alpha[0] * y)
    se = w.std() / math.sqrt(y.size)
    assert abs(w.mean() - math.exp(0.5 * alpha[0] ** 2 * var)) <= 3 * se
    assert lam_adj[0] * math.exp(0.5 * alpha[0] ** 2 * var) == pytest.approx(params.intensities[0])


def test_config_validation(fair):
    params, pol = fair
    with pytest.raises(InvariantViolation):
        SimConfig(params, pol, n_paths=0)
    with pytest.raises(InvariantViolation):
        SimConfig(params, pol, R0=1.5)
    with pytest.raises(QuoteDependentToxicity):
        SimConfig(params.with_buckets(toxicity_decay=0.5), pol)
    with pytest.raises(PolicyGridBreach):
        simulate(SimConfig(params, pol, n_paths=1, horizon=HORIZON, q0=1000))


def test_deterministic_and_path_local(fair):
    params, pol = fair
    a = simulate(SimConfig(params, pol, n_paths=20, horizon=HORIZON, seed=3))
    b = simulate(SimConfig(params, pol, n_paths=20, horizon=HORIZON, seed=3))
    c = simulate(SimConfig(params, pol, n_paths=10, horizon=HORIZON, seed=3))
    d = simulate(SimConfig(params, pol, n_paths=20, horizon=HORIZON, seed=4))
    assert np.array_equal(a.utility, b.utility) and np.array_equal(a.requests, b.requests)
    assert np.array_equal(a.utility[:10], c.utility)
    assert not np.array_equal(a.utility, d.utility)


def test_replay_accountant(fair):
    params, pol = fair
    res = simulate(SimConfig(params, pol, n_paths=30, horizon=HORIZON, seed=1, record_paths=True))
    pnl = res.extras["pnl"]
    n_capped = 0
    for i, (fills, S_path) in res.extras["fills"].items():
        assert len(fills) == res.accepts[i].sum()
        n_capped += int(fills[:, 5].sum())
        assert simulator.replay_cash(fills, S_path) == pytest.approx(pnl[i], abs=1e-8)
    assert n_capped > 0


def test_counts_consistent(fair):
    params, pol = fair
    res = simulate(SimConfig(params, pol, n_paths=50, horizon=HORIZON, seed=2))
    assert np.all(res.accepts <= res.requests) and np.all(res.capped <= res.accepts)
    assert np.all((res.terminal_R >= 0) & (res.terminal_R <= 1))
    assert np.all(np.abs(res.terminal_q) <= 60)
    t, mean, sd = res.relaxation()
    assert len(t) == res.checkpoint_R.shape[1] and t[-1] <= HORIZON + 1e-12
    assert np.all(sd >= 0)


def test_no_toxicity_marks_centered(clean):
    params, pol = clean
    res = simulate(SimConfig(params, pol, n_paths=300, horizon=HORIZON, seed=0))
    n = res.requests.sum()
    nu = params.nus[0]
    assert abs(res.mark_sum.sum() / n) <= 3 * nu / math.sqrt(n)


def test_toxic_marks_and_rates(fair):
    params, pol = fair
    res = simulate(SimConfig(params, pol, n_paths=300, horizon=HORIZON, seed=0))
    n = res.requests.sum()
    nu = params.nus[0]
    assert abs(res.mark_sum.sum() / n + 0.1) <= 3 * nu / math.sqrt(n)
    diff = res.total_requests - res.expected_requests
    m, se = res.mean_se(diff)
    assert abs(m) <= 3 * se


def test_ensemble_stats(fair):
    params, pol = fair
    res = simulate(SimConfig(params, pol, n_paths=40, horizon=HORIZON, seed=0))
    rows = simulator.ensemble_stats(res, bins=8)
    assert len(rows) == 8
    rates = [r.bin_rejection_rate for r in rows]
    assert rates == sorted(rates)
    same = dataclasses.replace(res, utility=np.full(res.n_paths, 1.25))
    one = simulator.ensemble_stats(same, bins=1)
    assert len(one) == 1 and one[0].stderr == 0.0 and one[0].mean_utility == 1.25
    with pytest.raises(TooFewPaths):
        simulator.ensemble_stats(res, bins=41)
