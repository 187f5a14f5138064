"""Property and cross-engine checks run by ``lastlook validate``.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
property. ``mutate`` installs a deliberately broken kernel for the duration
of a run so the suite can be shown to catch it.
"""

from __future__ import annotations

import contextlib
import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from . import adiabatic, experiments, hjb, kernels, protocols
from .config import SECONDS_PER_DAY, GridSpec, Protocol, default_grid, preset
from .protocols import ShadowState


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


MUTATIONS = ("psi",)


@contextlib.contextmanager
def mutation(name: str | None):
    """Temporarily replace a kernel with a perturbed version."""
    if name is None:
        yield
        return
    if name != "psi":
        raise ValueError(f"unknown mutation {name!r}; choose from {MUTATIONS}")
    original = kernels.psi

    def perturbed(mu, nu):
        return original(mu, nu) + 1e-3 * np.sin(np.asarray(mu, dtype=float))

    kernels.psi = perturbed
    try:
        yield
    finally:
        kernels.psi = original


# ---------------------------------------------------------------------------
# kernel properties


def check_psi_derivative(rng) -> tuple[bool, str]:
    mu = rng.uniform(-3.0, 3.0, 100)
    nu = rng.uniform(0.05, 3.0, 100)
    h = 1e-5 * nu
    fd = (kernels.psi(mu + h, nu) - kernels.psi(mu - h, nu)) / (2 * h)
    exact = kernels.norm_cdf(mu / nu)
    err = float(np.max(np.abs(fd - exact) / np.maximum(exact, 1e-3)))
    return err <= 1e-6, f"max relative error {err:.2e}"


def check_psi_convexity(rng) -> tuple[bool, str]:
    worst = math.inf
    for nu in (0.01, 0.24, 1.0, 5.0):
        mu = np.linspace(-10 * nu, 10 * nu, 2001)
        v = kernels.psi(mu, nu)
        worst = min(worst, float(np.min(v[2:] - 2 * v[1:-1] + v[:-2])))
    return worst >= -1e-10, f"min second difference {worst:.2e}"


def check_psi_small_nu(rng) -> tuple[bool, str]:
    mu = np.array([-1.0, -0.1, 0.0, 0.1, 1.0])
    nus = np.geomspace(2.0, 1e-6, 40)
    vals = np.array([kernels.psi(mu, n) for n in nus])
    monotone = bool(np.all(np.diff(vals, axis=0) <= 1e-15))
    gap = float(np.max(np.abs(vals[-1] - np.maximum(mu, 0.0))))
    return monotone and gap < 1e-6, f"monotone in nu: {monotone}, gap at nu=1e-6: {gap:.1e}"


def check_embedded_option(rng, n_cases: int = 10_000, draws: int = 2000) -> tuple[bool, str]:
    """MC of E[max(z(delta + Y - p), J)] vs J + z Psi(mu) for random inputs.

    Standard errors use the exact payoff variance, so rarely exercised
    options do not produce spurious z-scores. The pooled error must sit
    within 4 s.e.; each case within the familywise-equivalent bound.
    """
    z = rng.choice([1.0, 2.0, 5.0, 10.0, 20.0], n_cases)
    delta = rng.uniform(0.0, 1.0, n_cases)
    p = rng.uniform(-0.5, 0.5, n_cases)
    J = -rng.uniform(0.0, 1.0, n_cases) * z
    theta = rng.uniform(0.0, 0.3, n_cases)
    nu = rng.uniform(0.2, 1.0, n_cases)
    mu = delta - theta - p - J / z
    exact = J + z * kernels.psi(mu, nu)
    x = mu / nu
    second = (mu * mu + nu * nu) * kernels.norm_cdf(x) + mu * nu * kernels.norm_pdf(x)
    var = z * z * (second - kernels.psi(mu, nu) ** 2)
    se = np.sqrt(var / draws)
    mc = np.empty(n_cases)
    for lo in range(0, n_cases, 1000):
        s = slice(lo, lo + 1000)
        Y = -theta[s, None] + nu[s, None] * rng.standard_normal((len(exact[s]), draws))
        mc[s] = np.maximum(z[s, None] * (delta[s, None] + Y - p[s, None]), J[s, None]).mean(axis=1)
    zscores = (mc - exact) / se
    pooled = float(np.sum(mc - exact) / math.sqrt(np.sum(se ** 2)))
    bound = float(-_norm_ppf(0.5 * 6.3e-5 / n_cases))
    worst = float(np.max(np.abs(zscores)))
    return abs(pooled) <= 4.0 and worst <= bound, (
        f"pooled z {pooled:+.2f} (limit 4), worst case |z| {worst:.2f} (limit {bound:.2f})")


def _norm_ppf(x):
    from scipy.special import ndtri
    return float(ndtri(x))


# ---------------------------------------------------------------------------
# protocol properties


def _bucket(theta=0.1, tau=0.5):
    return preset("base").with_buckets(toxicity=theta, latency_s=tau).buckets[0]


def check_shift_rule(rng) -> tuple[bool, str]:
    b = _bucket()
    nu = b.mark_sd(100.0)
    worst = 0.0
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        for J in (0.0, -0.3):
            vals = [protocols.hamiltonian(proto, b, nu, ShadowState(p, J), closed_form=False).value
                    * math.exp(b.decay * p) for p in np.linspace(-2, 2, 9)]
            worst = max(worst, (max(vals) - min(vals)) / abs(np.mean(vals)))
    return worst <= 1e-9, f"max relative variation of H e^(kappa p) {worst:.2e}"


def check_hpp_identity(rng) -> tuple[bool, str]:
    b = _bucket()
    nu = b.mark_sd(100.0)
    worst = 0.0
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        for J in (0.0, -0.2, -0.6):
            closed = protocols.hamiltonian(proto, b, nu, ShadowState(0.0, J), closed_form=True).h_pp
            numeric = protocols.numeric_derivatives(proto, b, nu, ShadowState(0.0, J))[2]
            worst = max(worst, abs(closed - numeric) / abs(closed))
    return worst <= 1e-6, f"max relative gap {worst:.2e}"


def check_h_monotone_in_J(rng) -> tuple[bool, str]:
    b = _bucket()
    nu = b.mark_sd(100.0)
    ok = True
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        vals = protocols.myopic(proto, b, nu, np.linspace(-3.0, 0.0, 61)).value
        ok &= bool(np.all(np.diff(vals) >= -1e-12))
    return ok, "H(0, J) nondecreasing in J on [-3, 0]"


def check_unconstrained_dominates(rng) -> tuple[bool, str]:
    b = _bucket()
    nu = b.mark_sd(100.0)
    J = np.linspace(-2.0, 0.0, 41)
    hu = protocols.myopic(Protocol.UNCONSTRAINED, b, nu, J).value
    hf = protocols.myopic(Protocol.FAIR, b, nu, J).value
    gap = float(np.min(hu - hf))
    return gap >= -1e-12, f"min H_unconstrained - H_fair {gap:.2e}"


def check_accept_monotone_in_theta(rng) -> tuple[bool, str]:
    nu = 0.24
    thetas = np.linspace(0.0, 0.5, 26)
    ok = True
    for y, eps in ((-0.2, 0.3), (0.0, 0.5)):
        unc = kernels.norm_cdf((-thetas - y) / nu)
        a = (-eps + thetas) / nu
        fair = 1.0 - kernels.norm_cdf(a)
        ok &= bool(np.all(np.diff(unc) <= 0) and np.all(np.diff(fair) <= 0))
    return ok, "acceptance probability nonincreasing in theta at fixed controls"


def check_rbar_monotone(rng) -> tuple[bool, str]:
    params = preset("feedback_rho01")
    J = np.linspace(-2.0, 0.0, 50)
    ok = True
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        r = np.array([adiabatic.rbar_of_J(params, j, proto) for j in J])
        ok &= bool(np.all(np.diff(r) >= -1e-12))
    return ok, "r(J) nondecreasing on a 50-point grid, both protocols"


def check_riccati(rng) -> tuple[bool, str]:
    g, Sigma = 0.97, 3500.0
    worst = 0.0
    for gamma in (1e-4, 1e-3, 1e-2):
        for sigma in (50.0, 100.0, 200.0):
            A = adiabatic.riccati_stationary(gamma, sigma, g, Sigma)
            T = 40.0 / math.sqrt(8 * gamma * sigma ** 2 * g * Sigma)
            _, path = adiabatic.riccati_path(gamma, sigma, g, Sigma, T, t_eval=[0.0])
            worst = max(worst, abs(path[0] - A) / A)
    return worst <= 1e-8, f"max relative gap closed form vs ODE {worst:.2e}"


# ---------------------------------------------------------------------------
# grid solver properties


class _Cache:
    def __init__(self, grid: GridSpec):
        self.grid = grid
        self._sol = {}

    def solve(self, key, params, grid=None, two_d=None):
        if key not in self._sol:
            self._sol[key] = hjb.solve_horizon(params, grid or self.grid, two_d=two_d)
        return self._sol[key]


def check_monotone_in_R(cache) -> tuple[bool, str]:
    worst_V, worst_J = -math.inf, -math.inf
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        params = experiments.with_protocol(preset("feedback_rho01"), proto)
        sol = cache.solve(("feedback", proto), params)
        worst_V = max(worst_V, float(np.max(np.diff(sol.value.values, axis=1))))
        worst_J = max(worst_J, float(np.max(sol.policy.J)))
    return worst_V <= 0.0 and worst_J <= 0.0, f"max dV/dR step {worst_V:.2e}, max J {worst_J:.2e}"


def check_mirror(cache) -> tuple[bool, str]:
    ok = True
    for proto in (Protocol.UNCONSTRAINED, Protocol.FAIR):
        params = experiments.with_protocol(preset("feedback_rho01"), proto)
        sol = cache.solve(("feedback", proto), params)
        V = sol.value.values
        pol = sol.policy
        ok &= bool(np.array_equal(V, V[::-1]))
        ok &= bool(np.array_equal(pol.delta[:, hjb.BID], pol.delta[:, hjb.ASK, ::-1], equal_nan=True))
        ok &= bool(np.array_equal(pol.control[:, hjb.BID], pol.control[:, hjb.ASK, ::-1], equal_nan=True))
    return ok, "V(q, R) = V(-q, R) and bid(q) = ask(-q) bit for bit"


def _quotes(sol, span=20):
    pol = sol.policy
    rows = np.abs(pol.q_nodes) <= span
    return pol.delta[0][:, rows]


def check_refinement(cache) -> tuple[bool, str]:
    params = preset("feedback_rho01")
    base = cache.solve(("feedback", Protocol.UNCONSTRAINED), params)
    grid = cache.grid
    half_dt = cache.solve("half_dt", params, dataclasses.replace(grid, dt=grid.dt / 2))
    fine_r = cache.solve("fine_r", params, dataclasses.replace(grid, r_points=2 * grid.r_points - 1))
    d_dt = float(np.max(np.abs(_quotes(half_dt) - _quotes(base))))
    d_r = float(np.max(np.abs(_quotes(fine_r)[..., ::2] - _quotes(base))))
    return d_dt < 0.005 and d_r < 0.01, f"dt halved: {d_dt:.2e} bp (< 0.005), R nodes doubled: {d_r:.2e} bp (< 0.01)"


def check_collapse(cache) -> tuple[bool, str]:
    params = experiments.with_protocol(preset("feedback_rho01"), Protocol.FAIR).with_reputation(flow_decay=0.0)
    one = cache.solve("collapse_1d", params, two_d=False)
    two = cache.solve("collapse_2d", params, two_d=True)
    d1 = one.policy.delta[..., 0]
    spread = float(np.nanmax(np.abs(two.policy.delta - two.policy.delta[..., :1])))
    gap = float(np.nanmax(np.abs(two.policy.delta - d1[..., None])))
    return spread <= 1e-8 and gap <= 1e-8, f"R-variation {spread:.1e}, 2-D vs 1-D {gap:.1e}"


def check_classical_limit(cache) -> tuple[bool, str]:
    nu_target = 1e-6
    tau_s = (nu_target / 100.0) ** 2 * SECONDS_PER_DAY
    params = dataclasses.replace(preset("base").with_buckets(toxicity=0.0, latency_s=tau_s),
                                 gamma=0.0, protocol=Protocol.UNCONSTRAINED)
    # without risk aversion nothing confines inventory, so the truncation edge
    # must sit far from q = 0
    wide = dataclasses.replace(cache.grid, q_max=400)
    sol = cache.solve("classical", params, wide)
    mid = len(sol.policy.q_nodes) // 2
    half = sol.policy.delta[:, hjb.BID, mid, 0]
    err = float(np.max(np.abs(half - 1.0 / params.decays)))
    return err <= 1e-3, f"max |delta - 1/kappa| {err:.2e} bp"


def check_protocol_ordering(cache) -> tuple[bool, str]:
    u = {}
    for proto in Protocol:
        params = experiments.with_protocol(preset("table1_tau1s"), proto)
        sol = cache.solve(("table1", proto), params)
        u[proto] = hjb.report_metrics(sol).utility
    ok = u[Protocol.UNCONSTRAINED] >= u[Protocol.FAIR] >= u[Protocol.NONE]
    return ok, ", ".join(f"{p.value} {v:.2f}" for p, v in u.items())


KERNEL_CHECKS = [
    ("psi derivative equals Phi", check_psi_derivative),
    ("psi convex in mu", check_psi_convexity),
    ("psi small-nu limit", check_psi_small_nu),
    ("embedded-option Monte Carlo identity", check_embedded_option),
    ("shift rule", check_shift_rule),
    ("closed-form H_pp", check_hpp_identity),
    ("H monotone in J", check_h_monotone_in_J),
    ("unconstrained dominates fair", check_unconstrained_dominates),
    ("acceptance monotone in theta", check_accept_monotone_in_theta),
    ("r(J) monotone", check_rbar_monotone),
    ("Riccati closed form vs ODE", check_riccati),
]
SOLVER_CHECKS = [
    ("value monotone in R, J <= 0", check_monotone_in_R),
    ("exact mirror symmetry", check_mirror),
    ("grid refinement stability", check_refinement),
    ("rho_g = 0 collapse to 1-D", check_collapse),
    ("classical limit half-spreads", check_classical_limit),
    ("protocol utility ordering", check_protocol_ordering),
]


def run(seed: int = 0, grid: GridSpec | None = None, mutate: str | None = None,
        quick: bool = False) -> list[CheckResult]:
    """Run every check; ``quick`` skips the grid-solver checks."""
    grid = default_grid() if grid is None else grid
    out = []
    with mutation(mutate):
        rng = np.random.default_rng(seed)
        cache = _Cache(grid)
        checks = [(n, f, rng) for n, f in KERNEL_CHECKS]
        if not quick:
            checks += [(n, f, cache) for n, f in SOLVER_CHECKS]
        for name, fn, arg in checks:
            t0 = time.perf_counter()
            try:
                ok, detail = fn(arg)
            except Exception as exc:  # reported, not thrown
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return out
