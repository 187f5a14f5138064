"""Adiabatic-quadratic approximation with frozen reputation.

At frozen R the value is approximated by V = -A q^2 - C. Expanding the
Hamiltonians to second order around p = 0 gives the Riccati equation

    A' + 1/2 gamma sigma^2 = 4 g A^2 Sigma(J),   Sigma(J) = sum_n H^n_pp(0, J),

with stationary root A = sqrt(gamma sigma^2 / (8 g Sigma)). Under constant
slippage the quotes are delta_bar_n(J) + A (z_n +/- 2q) and the rejection
controls do not depend on q. J is closed by matching the myopic rejection
rate r(J) to R (``calibrate_J``).

``stationary_reputation`` needs J as a function of R that does not already
assume r(J) = R. It uses the reputation loss of the quadratic value: a
rejection raises R by rho (1 - R), the flow factor g(R) scales the value
rate, and a perturbation of R decays by (1 - rho) per request, so

    J(R) = -rho_g (1 - R) v (1 - exp(-rho lambda T)),

where v is the expected value per request and lambda the total request
intensity at q = 0. The fixed point R* = r(J(R*)) is found by damped
iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import kernels, protocols
from .config import ModelParams, Protocol, SizeBucket
from .errors import DegenerateSigma, NoConvergence, NoSolution, QuoteDependentToxicity
from .kernels import Bracket


@dataclass(frozen=True)
class MyopicBucket:
    delta_bar: float
    accept_prob: float
    h0: float
    h_pp: float
    intensity: float
    control: float
    mu_tilde: float | None = None
    eps_bar: float | None = None

    @property
    def reject_prob(self) -> float:
        return 1.0 - self.accept_prob


@dataclass(frozen=True)
class AdiabaticSolution:
    protocol: Protocol
    sizes: tuple[int, ...]
    J: float
    buckets: tuple[MyopicBucket, ...]
    Sigma: float
    A: float
    g: float
    r_bar: float
    R: float | None = None
    saturated: bool = False


@dataclass(frozen=True)
class QuoteSet:
    size: int
    bid: float
    ask: float
    threshold: float


def myopic_optimize(bucket: SizeBucket, nu: float, J: float, protocol) -> MyopicBucket:
    protocol = Protocol(protocol)
    if not bucket.constant_slippage:
        raise QuoteDependentToxicity("adiabatic closed forms require beta = 0")
    my = protocols.myopic(protocol, bucket, nu, float(J))
    mu = None if my.mu_tilde is None else float(my.mu_tilde)
    eps = float(my.control) if protocol is Protocol.FAIR else None
    return MyopicBucket(float(my.delta_bar), float(my.accept_prob), float(my.value),
                        float(my.h_pp), float(my.intensity), float(my.control), mu, eps)


def myopic_ladder(params: ModelParams, J: float, protocol=None) -> tuple[MyopicBucket, ...]:
    protocol = params.protocol if protocol is None else Protocol(protocol)
    return tuple(myopic_optimize(b, nu, J, protocol) for b, nu in zip(params.buckets, params.nus))


def sigma_sum(buckets) -> float:
    return float(sum(b.h_pp for b in buckets))


def riccati_stationary(gamma: float, sigma: float, g: float, Sigma: float) -> float:
    """Positive root of 1/2 gamma sigma^2 = 4 g A^2 Sigma."""
    if not (Sigma > 0 and g > 0):
        raise DegenerateSigma(f"need Sigma > 0 and g > 0, got Sigma={Sigma}, g={g}")
    return math.sqrt(gamma * sigma * sigma / (8.0 * g * Sigma))


def riccati_path(gamma: float, sigma: float, g: float, Sigma: float, horizon: float,
                 t_eval=None, rtol: float = 1e-12, atol: float = 1e-16):
    """Integrate A' = 4 g Sigma A^2 - 1/2 gamma sigma^2 backward from A(T) = 0.

    Returns (t, A(t)) in calendar time, t from 0 to ``horizon``.
    """
    if not (Sigma > 0 and g > 0):
        raise DegenerateSigma(f"need Sigma > 0 and g > 0, got Sigma={Sigma}, g={g}")
    c = 0.5 * gamma * sigma * sigma

    # s = T - t; dA/ds = c - 4 g Sigma A^2
    def rhs(s, A):
        return c - 4.0 * g * Sigma * A * A

    s_eval = None if t_eval is None else horizon - np.asarray(t_eval)[::-1]
    sol = solve_ivp(rhs, (0.0, horizon), [0.0], method="DOP853", t_eval=s_eval,
                    rtol=rtol, atol=atol)
    return horizon - sol.t[::-1], sol.y[0][::-1]


def rbar(buckets) -> float:
    """Myopic intensity-weighted rejection rate sum w (1 - P_acc) / sum w, w = Lambda e^{-kappa delta_bar}."""
    w = np.array([b.intensity for b in buckets])
    rej = np.array([b.reject_prob for b in buckets])
    return float(np.sum(w * rej) / np.sum(w))


def solution_at(params: ModelParams, J: float, R: float = 0.0, protocol=None,
                saturated: bool = False) -> AdiabaticSolution:
    protocol = params.protocol if protocol is None else Protocol(protocol)
    buckets = myopic_ladder(params, J, protocol)
    g = float(params.flow_factor(R))
    Sigma = sigma_sum(buckets)
    A = riccati_stationary(params.gamma, params.sigma, g, Sigma)
    return AdiabaticSolution(protocol, tuple(b.size for b in params.buckets), float(J), buckets,
                             Sigma, A, g, rbar(buckets), R, saturated)


def rbar_of_J(params: ModelParams, J: float, protocol=None) -> float:
    return rbar(myopic_ladder(params, J, protocol))


def calibrate_J(params: ModelParams, R: float, protocol=None, tol: float = 1e-12) -> AdiabaticSolution:
    """Solve r(J) = R on J <= 0; saturates at J = 0 when R >= r(0)."""
    protocol = params.protocol if protocol is None else Protocol(protocol)
    if not 0.0 <= R <= 1.0:
        raise ValueError(f"R must be in [0, 1], got {R}")
    r0 = rbar_of_J(params, 0.0, protocol)
    if R >= r0:
        return solution_at(params, 0.0, R, protocol, saturated=R > r0)
    z_max = max(b.size for b in params.buckets)
    J_min = -float(z_max)
    while rbar_of_J(params, J_min, protocol) >= R:
        if abs(J_min) > 1e3 * z_max:
            return solution_at(params, J_min, R, protocol, saturated=True)
        J_min *= 2.0
    try:
        J = kernels.find_root(lambda j: rbar_of_J(params, j, protocol) - R, Bracket(J_min, 0.0), tol)
    except kernels.NoSignChange as exc:
        raise NoSolution(str(exc)) from None
    return solution_at(params, J, R, protocol)


def approx_controls(solution: AdiabaticSolution, q: float) -> list[QuoteSet]:
    """Quotes delta_bar + A (z +/- 2q); threshold is -y* (unconstrained), eps (fair) or inf."""
    out = []
    for z, b in zip(solution.sizes, solution.buckets):
        if solution.protocol is Protocol.UNCONSTRAINED:
            thr = -b.control
        elif solution.protocol is Protocol.FAIR:
            thr = b.control
        else:
            thr = math.inf
        out.append(QuoteSet(z, b.delta_bar + solution.A * (z + 2 * q),
                            b.delta_bar + solution.A * (z - 2 * q), thr))
    return out


def request_value(params: ModelParams, solution: AdiabaticSolution) -> tuple[float, float]:
    """(value per request v, total intensity lambda) at q = 0 under the quadratic quotes."""
    k = params.decays
    z = params.sizes
    shift = np.exp(-k * solution.A * z)
    h = np.array([b.h0 for b in solution.buckets]) * shift
    lam = np.array([b.intensity for b in solution.buckets]) * shift
    return float(h.sum() / lam.sum()), float(2.0 * solution.g * lam.sum())


def reputation_loss(params: ModelParams, R: float, protocol=None, horizon: float | None = None,
                    tol: float = 1e-9, max_iter: int = 200) -> AdiabaticSolution:
    """Solve J = -rho_g (1 - R) v(J) (1 - exp(-rho lambda(J) T)) by fixed-point iteration."""
    T = params.horizon if horizon is None else horizon
    rho, rho_g = params.reputation.ema_weight, params.reputation.flow_decay
    J = 0.0
    for _ in range(max_iter):
        sol = solution_at(params, J, R, protocol)
        v, lam = request_value(params, sol)
        memory = 1.0 if math.isinf(T) else -math.expm1(-rho * lam * T)
        J_new = -rho_g * (1.0 - R) * v * memory
        if abs(J_new - J) <= tol * max(1.0, abs(J)):
            return solution_at(params, J_new, R, protocol)
        J = J_new
    raise NoConvergence("reputation loss iteration did not converge")


def stationary_reputation(params: ModelParams, protocol=None, q: float = 0.0,
                          horizon: float | None = None, omega: float = 0.5, tol: float = 1e-6,
                          max_iter: int = 1000) -> AdiabaticSolution:
    """Damped iteration R <- (1 - omega) R + omega r(J(R)); returns the solution at R*.

    The myopic closure ignores inventory, so ``q`` only documents the point
    at which the fixed point is taken.
    """
    R = 0.0
    for _ in range(max_iter):
        sol = reputation_loss(params, R, protocol, horizon)
        if abs(sol.r_bar - R) < tol:
            return sol
        R = (1.0 - omega) * R + omega * sol.r_bar
    raise NoConvergence(f"R* iteration did not converge (last R = {R:.6g})")


def quote_table(solution: AdiabaticSolution, q_nodes) -> np.ndarray:
    """Array (n_buckets, 2, len(q)) of bid/ask quotes."""
    q = np.asarray(q_nodes, dtype=float)
    z = np.asarray(solution.sizes, dtype=float)[:, None]
    d = np.array([b.delta_bar for b in solution.buckets])[:, None]
    return np.stack([d + solution.A * (z + 2 * q), d + solution.A * (z - 2 * q)], axis=1)


def policy_surface(params: ModelParams, grid, protocol=None, horizon: float | None = None):
    """Adiabatic controls on the (q, R) lattice as a PolicySurface.

    Each R node uses the reputation-loss closure J(R); quotes follow the
    quadratic skew and channels that would leave the inventory grid are
    marked invalid, as in the exact solver.
    """
    from .hjb import ASK, BID, PolicySurface

    protocol = params.protocol if protocol is None else Protocol(protocol)
    grid.check(params)
    q = grid.q_nodes
    two_d = params.reputation.flow_decay > 0
    R_nodes = grid.r_nodes if two_d else np.array([0.0])
    nb, nq, nR = len(params.buckets), len(q), len(R_nodes)
    shape = (nb, 2, nq, nR)
    delta = np.full(shape, np.nan)
    control = np.full(shape, np.nan)
    accept = np.full(shape, np.nan)
    p_all = np.full(shape, np.nan)
    J = np.zeros((nq, nR))
    valid = np.zeros(shape, dtype=bool)
    q_max = int(q[-1])
    for j, R in enumerate(R_nodes):
        sol = reputation_loss(params, float(R), protocol, horizon)
        J[:, j] = sol.J
        for n, (z, b) in enumerate(zip(params.sizes, sol.buckets)):
            z = int(z)
            thr = b.control if protocol is not Protocol.NONE else -math.inf
            for side, skew in ((BID, z + 2 * q), (ASK, z - 2 * q)):
                ok = (q + z <= q_max) if side == BID else (q - z >= -q_max)
                p = sol.A * skew
                valid[n, side, :, j] = ok
                p_all[n, side, ok, j] = p[ok]
                delta[n, side, ok, j] = b.delta_bar + p[ok]
                control[n, side, ok, j] = thr
                accept[n, side, ok, j] = b.accept_prob
    lam0 = params.intensities[:, None, None, None]
    kap = params.decays[:, None, None, None]
    g = params.flow_factor(R_nodes)
    intensity = np.where(valid, g * lam0 * np.exp(-kap * np.where(valid, delta, 0.0)), 0.0)
    return PolicySurface(protocol, params.sizes.astype(int), q, R_nodes, delta, control, accept,
                         p_all, J, intensity, valid)
