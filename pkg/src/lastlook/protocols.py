"""Request-level economics of the three acceptance protocols.

For a request of size z on one side with quote offset delta, the latency
mark is Y ~ N(m(delta), nu^2). With accept marginal p and rejection
continuation loss J the dealer's expected increment is

* no rejection:   z (delta + m - p)
* unconstrained:  E[max(z (delta + Y - p), J)] = J + z Psi(delta + m - p - J/z)
* fair:           J Phi(a) + z (delta - p) B + z C   (symmetric tolerance eps)

and the bucket Hamiltonian is the sup over controls of Lambda0 e^{-kappa delta}
times the increment. Under constant slippage (beta = 0) the maximizer obeys
the shift rule H(p, J) = e^{-kappa p} H(0, J), so every Hamiltonian reduces
to a myopic problem at p = 0 that is solved in closed form up to a 1-D root
or maximization. The ``myopic_*`` functions are vectorized over J.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from . import kernels
from .config import Protocol, SizeBucket
from .errors import NegativeTolerance, NonPositiveNu, OptimizerFailure, QuoteDependentToxicity
from .kernels import INV_SQRT_2PI, Bracket


@dataclass(frozen=True)
class ShadowState:
    p: float = 0.0
    J: float = 0.0


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    delta_star: float
    accept_prob: float
    h_p: float
    h_pp: float
    tolerance: float | None = None
    reject_threshold: float | None = None
    flagged: bool = False


class Decision(str, Enum):
    ACCEPT = "accept"
    ACCEPT_CAPPED = "accept_capped"
    REJECT = "reject"


def _check_nu(nu):
    if np.any(~(np.asarray(nu) > 0)):
        raise NonPositiveNu(f"nu must be positive, got {nu!r}")


def _phi(x):
    return INV_SQRT_2PI * np.exp(-0.5 * x * x)


# ---------------------------------------------------------------------------
# expected increments


def expected_increment_none(bucket: SizeBucket, delta, state: ShadowState):
    return bucket.size * (delta + bucket.mark_mean(delta) - state.p)


def expected_increment_unconstrained(bucket: SizeBucket, nu: float, delta, state: ShadowState):
    """J + z Psi(delta + m(delta) - p - J/z)."""
    _check_nu(nu)
    z = bucket.size
    mu = delta + bucket.mark_mean(delta) - state.p - state.J / z
    return state.J + z * kernels.psi(mu, nu)


def fair_terms(m, nu, eps):
    """Cutoffs and moments of the fair protocol: (a, b, B, C).

    a, b are the standardized reject and cap cutoffs, B = P(accept) and
    C = E[min(Y, eps) 1{Y >= -eps}].
    """
    a = (-eps - m) / nu
    b = (eps - m) / nu
    Phi_a = special.ndtr(a)
    Phi_b = special.ndtr(b)
    B = special.ndtr(-a)
    C = m * (Phi_b - Phi_a) + nu * (_phi(a) - _phi(b)) + eps * special.ndtr(-b)
    return a, b, B, C


def expected_increment_fair(bucket: SizeBucket, nu: float, delta, eps, state: ShadowState):
    """J Phi(a) + z (delta - p) B + z C."""
    if np.any(np.asarray(eps) < 0):
        raise NegativeTolerance(f"eps must be >= 0, got {eps!r}")
    _check_nu(nu)
    z = bucket.size
    a, _, B, C = fair_terms(bucket.mark_mean(delta), nu, eps)
    return state.J * special.ndtr(a) + z * (delta - state.p) * B + z * C


# ---------------------------------------------------------------------------
# myopic (p = 0) solutions under constant slippage, vectorized over J


@dataclass(frozen=True)
class MyopicArrays:
    """Optimizer at p = 0 for constant slippage; every field has the shape of J.

    ``control`` is y* (unconstrained), eps (fair) or -inf (no rejection).
    ``intensity`` is Lambda0 e^{-kappa delta_bar}; ``dvalue_dJ`` follows from
    the envelope theorem; ``h_pp`` is the closed-form second p-derivative.
    """

    J: np.ndarray
    delta_bar: np.ndarray
    control: np.ndarray
    accept_prob: np.ndarray
    value: np.ndarray
    dvalue_dJ: np.ndarray
    intensity: np.ndarray
    h_pp: np.ndarray
    mu_tilde: np.ndarray | None = None


def _require_constant(bucket: SizeBucket):
    if not bucket.constant_slippage:
        raise QuoteDependentToxicity("closed forms require constant slippage (beta = 0)")


def _pack(J, delta_bar, control, accept, value, dvdJ, intensity, h_pp, mu=None):
    return MyopicArrays(J, delta_bar, control, accept, value, dvdJ, intensity, h_pp, mu)


def _unconstrained_x0(kn: float) -> float:
    """Mode of the FOC residual: phi(x)/Phi(x) = kappa nu."""
    log_c = math.log(kn) + 0.5 * math.log(2.0 * math.pi)

    def f(x):
        return -0.5 * x * x - special.log_ndtr(x) - log_c

    return kernels.bisect_vec(f, -40.0, 40.0, 200).item()


def myopic_unconstrained(bucket: SizeBucket, nu: float, J) -> MyopicArrays:
    """Root of Phi(x) = kappa (J/z + nu psi(x)); delta_bar = theta + J/z + nu x.

    For J <= 0 the residual rises to its mode x0 and then decreases, so the
    root is unique on [x0, (1 - kappa J/z)/(kappa nu) + 1].
    """
    _require_constant(bucket)
    _check_nu(nu)
    J = np.asarray(J, dtype=float)
    z, lam, k, theta = bucket.size, bucket.base_intensity, bucket.decay, bucket.toxicity
    kn = k * nu
    x0 = _unconstrained_x0(kn)

    def resid(x):
        return special.ndtr(x) - k * J / z - kn * kernels.psi_std(x)

    hi = np.maximum((1.0 - k * J / z) / kn + 1.0, x0 + 1.0)
    if np.any(resid(np.full_like(J, x0)) < 0):
        raise OptimizerFailure("myopic FOC has no interior root (J too large)")
    x = kernels.bisect_vec(resid, np.full_like(J, x0), hi, 200)
    delta_bar = theta + J / z + nu * x
    intensity = lam * np.exp(-k * delta_bar)
    accept = special.ndtr(x)
    value = intensity * (J + z * nu * kernels.psi_std(x))
    dvdJ = intensity * special.ndtr(-x)
    h_pp = intensity * z * k * accept
    y_star = J / z - delta_bar
    return _pack(J, delta_bar, y_star, accept, value, dvdJ, intensity, h_pp, x)


def fair_delta_bar(bucket: SizeBucket, nu: float, eps, J):
    """Explicit inner maximizer at p = 0 for fixed eps (constant slippage)."""
    z, k = bucket.size, bucket.decay
    a, _, B, C = fair_terms(-bucket.toxicity, nu, eps)
    return 1.0 / k - (J * special.ndtr(a) + z * C) / (z * B)


def _fair_objective(bucket, nu, eps, J):
    z, lam, k = bucket.size, bucket.base_intensity, bucket.decay
    a, _, B, _ = fair_terms(-bucket.toxicity, nu, eps)
    d = fair_delta_bar(bucket, nu, eps, J)
    return lam * np.exp(-k * d) * z * B / k


def fair_eps_max(bucket: SizeBucket, nu: float) -> float:
    return 8.0 * nu + bucket.toxicity


def myopic_fair(bucket: SizeBucket, nu: float, J, n_grid: int = 128) -> MyopicArrays:
    """Outer 1-D maximization over eps of Lambda0 e^{-kappa delta_bar(eps)} z B / kappa."""
    _require_constant(bucket)
    _check_nu(nu)
    J = np.asarray(J, dtype=float)
    z, lam, k = bucket.size, bucket.base_intensity, bucket.decay
    eps = kernels.grid_max_vec(lambda e: _fair_objective(bucket, nu, e, J),
                               np.zeros_like(J), np.full_like(J, fair_eps_max(bucket, nu)),
                               n_grid=n_grid, iters=90)
    a, _, B, C = fair_terms(-bucket.toxicity, nu, eps)
    delta_bar = 1.0 / k - (J * special.ndtr(a) + z * C) / (z * B)
    intensity = lam * np.exp(-k * delta_bar)
    value = intensity * z * B / k
    dvdJ = intensity * special.ndtr(a)
    h_pp = intensity * z * k * B
    return _pack(J, delta_bar, eps, B, value, dvdJ, intensity, h_pp)


def myopic_none(bucket: SizeBucket, nu: float, J) -> MyopicArrays:
    _require_constant(bucket)
    J = np.asarray(J, dtype=float)
    z, lam, k = bucket.size, bucket.base_intensity, bucket.decay
    delta_bar = np.full_like(J, 1.0 / k + bucket.toxicity)
    intensity = lam * np.exp(-k * delta_bar)
    value = intensity * z / k
    return _pack(J, delta_bar, np.full_like(J, -np.inf), np.ones_like(J), value,
                 np.zeros_like(J), intensity, intensity * z * k)


def myopic(protocol: Protocol, bucket: SizeBucket, nu: float, J) -> MyopicArrays:
    protocol = Protocol(protocol)
    if protocol is Protocol.UNCONSTRAINED:
        return myopic_unconstrained(bucket, nu, J)
    if protocol is Protocol.FAIR:
        return myopic_fair(bucket, nu, J)
    return myopic_none(bucket, nu, J)


# ---------------------------------------------------------------------------
# scalar Hamiltonians


def delta_bracket(bucket: SizeBucket, nu: float, state: ShadowState) -> Bracket:
    k = bucket.decay
    hi = 10.0 / k + abs(state.p) + abs(state.J) / bucket.size + 6.0 * nu
    return Bracket(-5.0 / k, hi)


def _maximize_delta(objective, bracket: Bracket, tol=1e-11) -> tuple[float, float]:
    """maximize_1d with one widen-and-retry when the optimum sits on an edge."""
    x, fx = kernels.maximize_1d(objective, bracket, tol=tol)
    edge = 1e-6 * bracket.width
    if x - bracket.lo < edge or bracket.hi - x < edge:
        wide = Bracket(bracket.lo - bracket.width, bracket.hi + bracket.width)
        x, fx = kernels.maximize_1d(objective, wide, tol=tol, n_grid=128)
        if x - wide.lo < edge or wide.hi - x < edge:
            raise OptimizerFailure(f"optimum on bracket edge at delta={x:.6g}")
    return x, fx


def _five_point(fn, p: float, h: float) -> tuple[float, float, float]:
    f_2m, f_m, f_0, f_p, f_2p = (fn(p + s * h) for s in (-2, -1, 0, 1, 2))
    d1 = (f_2m - 8 * f_m + 8 * f_p - f_2p) / (12 * h)
    d2 = (-f_2m + 16 * f_m - 30 * f_0 + 16 * f_p - f_2p) / (12 * h * h)
    return f_0, d1, d2


def _unconstrained_numeric(bucket, nu, state):
    z, lam, k = bucket.size, bucket.base_intensity, bucket.decay

    def objective(d):
        return lam * math.exp(-k * d) * expected_increment_unconstrained(bucket, nu, d, state)

    return _maximize_delta(objective, delta_bracket(bucket, nu, state))


def _fair_inner(bucket, nu, eps, state, bracket):
    lam, k = bucket.base_intensity, bucket.decay

    def objective(d):
        return lam * math.exp(-k * d) * expected_increment_fair(bucket, nu, d, eps, state)

    return kernels.maximize_1d(objective, bracket, tol=1e-11)


def _fair_numeric(bucket, nu, state):
    bracket = delta_bracket(bucket, nu, state)
    eps_hi = fair_eps_max(bucket, nu)
    eps, value = kernels.maximize_1d(lambda e: _fair_inner(bucket, nu, e, state, bracket)[1],
                                     Bracket(0.0, eps_hi), tol=1e-10, n_grid=128)
    d, value = _fair_inner(bucket, nu, eps, state, bracket)
    return d, eps, value


def _none_numeric(bucket, nu, state):
    lam, k = bucket.base_intensity, bucket.decay

    def objective(d):
        return lam * math.exp(-k * d) * expected_increment_none(bucket, d, state)

    return _maximize_delta(objective, delta_bracket(bucket, nu, state))


def _numeric_value_fn(protocol, bucket, nu, J):
    if protocol is Protocol.UNCONSTRAINED:
        return lambda p: _unconstrained_numeric(bucket, nu, ShadowState(p, J))[1]
    if protocol is Protocol.FAIR:
        return lambda p: _fair_numeric(bucket, nu, ShadowState(p, J))[2]
    return lambda p: _none_numeric(bucket, nu, ShadowState(p, J))[1]


def numeric_derivatives(protocol, bucket: SizeBucket, nu: float, state: ShadowState):
    """5-point central differences of the numerically optimized Hamiltonian in p."""
    fn = _numeric_value_fn(Protocol(protocol), bucket, nu, state.J)
    return _five_point(fn, state.p, 1e-3 / bucket.decay)


def _warn_positive_J(state):
    if state.J > 0:
        warnings.warn(f"J = {state.J:.3g} > 0: value surface not monotone in R", RuntimeWarning,
                      stacklevel=3)
        return True
    return False


def _closed(protocol, bucket, nu, state):
    my = myopic(protocol, bucket, nu, state.J)
    shift = math.exp(-bucket.decay * state.p)
    value = float(my.value) * shift
    k = bucket.decay
    return my, value, -k * value, k * k * value


def hamiltonian_unconstrained(bucket: SizeBucket, nu: float, state: ShadowState,
                              closed_form: bool | None = None) -> HamiltonianEval:
    _check_nu(nu)
    flagged = _warn_positive_J(state)
    if closed_form is None:
        closed_form = bucket.constant_slippage and not flagged
    z = bucket.size
    if closed_form:
        my, value, h_p, h_pp = _closed(Protocol.UNCONSTRAINED, bucket, nu, state)
        delta = state.p + float(my.delta_bar)
    else:
        delta, _ = _unconstrained_numeric(bucket, nu, state)
        value, h_p, h_pp = numeric_derivatives(Protocol.UNCONSTRAINED, bucket, nu, state)
    y_star = state.J / z - delta + state.p
    accept = kernels.norm_cdf((float(bucket.mark_mean(delta)) - y_star) / nu)
    return HamiltonianEval(value, delta, accept, h_p, h_pp, reject_threshold=y_star,
                           flagged=flagged)


def hamiltonian_fair(bucket: SizeBucket, nu: float, state: ShadowState,
                     closed_form: bool | None = None) -> HamiltonianEval:
    _check_nu(nu)
    flagged = _warn_positive_J(state)
    if closed_form is None:
        closed_form = bucket.constant_slippage
    if closed_form:
        my, value, h_p, h_pp = _closed(Protocol.FAIR, bucket, nu, state)
        delta, eps = state.p + float(my.delta_bar), float(my.control)
    else:
        delta, eps, _ = _fair_numeric(bucket, nu, state)
        value, h_p, h_pp = numeric_derivatives(Protocol.FAIR, bucket, nu, state)
    _, _, B, _ = fair_terms(float(bucket.mark_mean(delta)), nu, eps)
    return HamiltonianEval(value, delta, float(B), h_p, h_pp, tolerance=eps, flagged=flagged)


def hamiltonian_none(bucket: SizeBucket, nu: float, state: ShadowState,
                     closed_form: bool | None = None) -> HamiltonianEval:
    if closed_form is None:
        closed_form = bucket.constant_slippage
    if closed_form:
        my, value, h_p, h_pp = _closed(Protocol.NONE, bucket, nu, state)
        delta = state.p + float(my.delta_bar)
    else:
        delta, _ = _none_numeric(bucket, nu, state)
        value, h_p, h_pp = numeric_derivatives(Protocol.NONE, bucket, nu, state)
    return HamiltonianEval(value, delta, 1.0, h_p, h_pp, reject_threshold=-math.inf)


def hamiltonian(protocol, bucket: SizeBucket, nu: float, state: ShadowState,
                closed_form: bool | None = None) -> HamiltonianEval:
    protocol = Protocol(protocol)
    if protocol is Protocol.UNCONSTRAINED:
        return hamiltonian_unconstrained(bucket, nu, state, closed_form)
    if protocol is Protocol.FAIR:
        return hamiltonian_fair(bucket, nu, state, closed_form)
    return hamiltonian_none(bucket, nu, state, closed_form)


def decide(protocol, control: float, y_observed: float) -> Decision:
    """Accept/reject rule; boundaries (Y = y*, |Y| = eps) are accepted."""
    protocol = Protocol(protocol)
    if protocol is Protocol.UNCONSTRAINED:
        return Decision.ACCEPT if y_observed >= control else Decision.REJECT
    if protocol is Protocol.FAIR:
        if y_observed < -control:
            return Decision.REJECT
        return Decision.ACCEPT if y_observed <= control else Decision.ACCEPT_CAPPED
    return Decision.ACCEPT


# ---------------------------------------------------------------------------
# vectorized numeric optimizer (any toxicity decay), used by the grid solver


@dataclass(frozen=True)
class ControlArrays:
    delta: np.ndarray
    control: np.ndarray
    accept_prob: np.ndarray
    value: np.ndarray


def _increment_vec(protocol, bucket, nu, d, p, J, eps=None):
    z = bucket.size
    m = bucket.mark_mean(d)
    if protocol is Protocol.UNCONSTRAINED:
        x = (d + m - p - J / z) / nu
        return J + z * nu * kernels.psi_std(x)
    if protocol is Protocol.FAIR:
        a, _, B, C = fair_terms(m, nu, eps)
        return J * special.ndtr(a) + z * (d - p) * B + z * C
    return z * (d + m - p)


def _delta_limits(bucket, nu, p, J):
    k, z = bucket.decay, bucket.size
    lo = np.full(np.broadcast(p, J).shape, -5.0 / k)
    hi = 10.0 / k + np.abs(p) + np.abs(J) / z + 6.0 * nu
    return lo, hi


def optimize_vec(protocol, bucket: SizeBucket, nu: float, p, J, n_grid: int = 64,
                 n_eps: int = 48, chunk: int = 4096) -> ControlArrays:
    """Numeric optimal controls for arrays of (p, J), any toxicity decay."""
    protocol = Protocol(protocol)
    p, J = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(J, dtype=float))
    shape = p.shape
    p, J = p.ravel(), J.ravel()
    lam, k, z = bucket.base_intensity, bucket.decay, bucket.size
    out = {name: np.empty(p.size) for name in ("delta", "control", "accept", "value")}
    for s in range(0, p.size, chunk):
        pc, Jc = p[s:s + chunk], J[s:s + chunk]
        lo, hi = _delta_limits(bucket, nu, pc, Jc)
        if protocol is Protocol.FAIR:
            def inner(e):
                def f(d):
                    return lam * np.exp(-k * d) * _increment_vec(protocol, bucket, nu, d, pc, Jc, e)
                d = kernels.grid_max_vec(f, np.broadcast_to(lo, e.shape), np.broadcast_to(hi, e.shape),
                                         n_grid, 60)
                return d, f(d)

            e_hi = np.full(pc.shape, fair_eps_max(bucket, nu))
            eps = kernels.grid_max_vec(lambda e: inner(e)[1], np.zeros_like(pc), e_hi, n_eps, 50)
            d, v = inner(eps)
            _, _, B, _ = fair_terms(bucket.mark_mean(d), nu, eps)
            ctrl, acc = eps, B
        else:
            def f(d):
                return lam * np.exp(-k * d) * _increment_vec(protocol, bucket, nu, d, pc, Jc)
            d = kernels.grid_max_vec(f, lo, hi, n_grid, 80)
            v = f(d)
            if protocol is Protocol.UNCONSTRAINED:
                ctrl = Jc / z - d + pc
                acc = special.ndtr((bucket.mark_mean(d) - ctrl) / nu)
            else:
                ctrl = np.full_like(d, -np.inf)
                acc = np.ones_like(d)
        out["delta"][s:s + chunk] = d
        out["control"][s:s + chunk] = ctrl
        out["accept"][s:s + chunk] = acc
        out["value"][s:s + chunk] = v
    return ControlArrays(*(out[n].reshape(shape) for n in ("delta", "control", "accept", "value")))
