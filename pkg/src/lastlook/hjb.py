"""Explicit backward solver for the reduced HJB on the (q, R) lattice.

    0 = dV/dt - 1/2 gamma sigma^2 q^2 + g(R) sum_{n,i} H^n(p^{n,i}, J)

with p^{n,i} = (V(q,R) - V(q +/- z_n, R_acc(R))) / z_n and
J = V(q, R_rej(R)) - V(q, R). Stepping backward from V(T) = 0,

    V(t - dt) = V(t) + dt [g(R) sum H - 1/2 gamma sigma^2 q^2].

Inventory is an integer lattice so q +/- z_n are exact nodes; the reputation
images are linearly interpolated. Under constant slippage the Hamiltonians
are e^{-kappa p} h0(J) with h0 tabulated once per bucket (cubic Hermite,
derivatives from the envelope theorem). Quote-dependent toxicity uses a
bilinear table of log H + kappa p over (p, J). Controls are extracted
exactly from the final surface with the protocol optimizers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply, spsolve

from . import protocols
from .config import GridSpec, ModelParams, Protocol
from .errors import InvariantViolation, NoConvergence, NonFiniteValue, OffGrid, StabilityViolation

BID, ASK = 0, 1


@dataclass(frozen=True)
class ValueSurface:
    q_nodes: np.ndarray
    r_nodes: np.ndarray
    values: np.ndarray
    t: float = 0.0

    def at(self, q: int, R: float) -> float:
        iq = _q_index(self.q_nodes, q)
        return float(_interp_r(self.r_nodes, self.values[iq], R))


@dataclass(frozen=True)
class PolicySurface:
    """Controls per (bucket, side, q, R); side 0 = bid, 1 = ask.

    ``control`` holds y* (unconstrained), eps (fair) or -inf (no rejection).
    Channels whose fill would leave the inventory grid have ``valid`` False,
    zero intensity and NaN controls.
    """

    protocol: Protocol
    sizes: np.ndarray
    q_nodes: np.ndarray
    r_nodes: np.ndarray
    delta: np.ndarray
    control: np.ndarray
    accept_prob: np.ndarray
    p: np.ndarray
    J: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray

    def rejection_rate(self) -> np.ndarray:
        """Intensity-weighted rejection probability r(q, R)."""
        lam = self.intensity
        rej = np.where(self.valid, lam * (1.0 - np.nan_to_num(self.accept_prob)), 0.0)
        return rej.sum(axis=(0, 1)) / lam.sum(axis=(0, 1))

    def total_intensity(self) -> np.ndarray:
        return self.intensity.sum(axis=(0, 1))


@dataclass(frozen=True)
class MetricsRow:
    q: int
    R: float
    spread: float
    threshold: float
    rejection: float
    rejection_weighted: float
    utility: float


@dataclass
class Solution:
    params: ModelParams
    grid: GridSpec
    value: ValueSurface
    policy: PolicySurface
    horizon_value: ValueSurface
    elapsed: float
    steps: int
    converged: bool = True
    growth_rate: float | None = None
    positive_J_nodes: int = 0
    diagnostics: dict = field(default_factory=dict)


def _q_index(q_nodes, q) -> int:
    i = int(round(q)) - int(q_nodes[0])
    if q != int(round(q)) or not 0 <= i < len(q_nodes):
        raise OffGrid(f"q = {q} is not an inventory node")
    return i


def _interp_r(r_nodes, column, R):
    """Linear interpolation along the last axis (R); constant if a single node."""
    if not 0.0 <= R <= 1.0:
        raise OffGrid(f"R = {R} outside [0, 1]")
    if len(r_nodes) == 1:
        return column[..., 0]
    pos = R * (len(r_nodes) - 1)
    j = min(int(math.floor(pos)), len(r_nodes) - 2)
    w = pos - j
    return column[..., j] * (1.0 - w) + column[..., j + 1] * w


def _interp_weights(x, n):
    pos = x * (n - 1)
    i = np.minimum(np.floor(pos).astype(int), n - 2)
    return i, pos - i


# ---------------------------------------------------------------------------
# Hamiltonian tables


class _ShiftTable:
    """H(p, J) = e^{-kappa p} h0(J) with cubic Hermite h0 on a uniform J grid."""

    def __init__(self, protocol, bucket, nu, J_lo=-2.0, J_hi=1e-3, step=1e-3):
        self.protocol, self.bucket, self.nu = protocol, bucket, nu
        self.kappa = bucket.decay
        self.J_hi = J_hi
        self.step = step
        self._build(J_lo)

    def _build(self, J_lo):
        n = int(math.ceil((self.J_hi - J_lo) / self.step)) + 1
        self.J0 = self.J_hi - (n - 1) * self.step
        grid = self.J0 + self.step * np.arange(n)
        my = protocols.myopic(self.protocol, self.bucket, self.nu, grid)
        self.f = my.value
        self.d = my.dvalue_dJ * self.step
        self.lam = my.intensity
        self.n = n
        self.h_zero = float(protocols.myopic(self.protocol, self.bucket, self.nu, 0.0).value)

    def ensure(self, J_min):
        if J_min < self.J0:
            self._build(2.0 * J_min)

    def _locate(self, J):
        x = (np.minimum(J, self.J_hi) - self.J0) / self.step
        i = np.clip(np.floor(x).astype(np.intp), 0, self.n - 2)
        return i, x - i

    def h0(self, J):
        i, t = self._locate(J)
        t2 = t * t
        t3 = t2 * t
        return ((2 * t3 - 3 * t2 + 1) * self.f[i] + (t3 - 2 * t2 + t) * self.d[i]
                + (-2 * t3 + 3 * t2) * self.f[i + 1] + (t3 - t2) * self.d[i + 1])

    def intensity0(self, J):
        i, t = self._locate(J)
        return self.lam[i] * (1 - t) + self.lam[i + 1] * t

    def value(self, p, h0):
        return np.exp(-self.kappa * p) * h0


class _GridTable:
    """Bilinear table of log H + kappa p over (p, J) for quote-dependent toxicity."""

    def __init__(self, protocol, bucket, nu, two_d, p_max=4.0, p_step=0.01, J_lo=-1.0,
                 J_step=0.005):
        self.protocol, self.bucket, self.nu = protocol, bucket, nu
        self.kappa = bucket.decay
        self.two_d = two_d and protocol is not Protocol.NONE
        if not self.two_d:
            p_step = min(p_step, 0.002)
        self.p0, self.p_step = -p_max, p_step
        self.np_ = int(round(2 * p_max / p_step)) + 1
        self.J_step = J_step
        self._build(J_lo)

    def _build(self, J_lo):
        p = self.p0 + self.p_step * np.arange(self.np_)
        if self.two_d:
            nJ = int(math.ceil(-J_lo / self.J_step)) + 1
            J = -(nJ - 1) * self.J_step + self.J_step * np.arange(nJ)
        else:
            J = np.array([0.0])
        self.J0, self.nJ = J[0], len(J)
        pp, JJ = np.meshgrid(p, J, indexing="ij")
        c = protocols.optimize_vec(self.protocol, self.bucket, self.nu, pp, JJ)
        if np.any(c.value <= 0):
            raise NonFiniteValue("non-positive Hamiltonian in table")
        lam_log = math.log(self.bucket.base_intensity) - self.kappa * c.delta
        self.L = np.log(c.value) + self.kappa * pp
        self.M = lam_log + self.kappa * pp

    def ensure(self, J_min):
        if self.two_d and J_min < self.J0:
            self._build(2.0 * J_min)

    def _bilinear(self, table, p, J):
        x = np.clip((p - self.p0) / self.p_step, 0.0, self.np_ - 1.0)
        i = np.minimum(np.floor(x).astype(np.intp), self.np_ - 2)
        s = x - i
        if self.nJ == 1:
            return table[i, 0] * (1 - s) + table[i + 1, 0] * s
        y = np.clip((J - self.J0) / self.J_step, 0.0, self.nJ - 1.0)
        j = np.minimum(np.floor(y).astype(np.intp), self.nJ - 2)
        t = y - j
        return ((table[i, j] * (1 - s) + table[i + 1, j] * s) * (1 - t)
                + (table[i, j + 1] * (1 - s) + table[i + 1, j + 1] * s) * t)

    def full_value(self, p, J):
        return np.exp(self._bilinear(self.L, p, J) - self.kappa * p)

    def intensity(self, p, J):
        return np.exp(self._bilinear(self.M, p, J) - self.kappa * p)


# ---------------------------------------------------------------------------
# solver


class HJBSolver:
    """Backward stepper for one parameter set.

    ``two_d=None`` picks the 1-D (g = 1, J = 0) reduction when rho_g = 0.
    """

    def __init__(self, params: ModelParams, grid: GridSpec, two_d: bool | None = None):
        grid.check(params)
        self.params, self.grid = params, grid
        if two_d is None:
            two_d = params.reputation.flow_decay > 0
        self.two_d = bool(two_d)
        self.q = grid.q_nodes
        self.R = grid.r_nodes if self.two_d else np.array([0.0])
        self.nq, self.nR = len(self.q), len(self.R)
        rep = params.reputation
        self.ia, self.wa = _interp_weights(rep.after_accept(self.R), self.nR)
        self.ir, self.wr = _interp_weights(rep.after_reject(self.R), self.nR)
        self.g = params.flow_factor(self.R)[None, :]
        self.penalty = (0.5 * params.gamma * params.sigma ** 2 * self.q.astype(float) ** 2)[:, None]
        self.sizes = [b.size for b in params.buckets]
        self.kappas = [b.decay for b in params.buckets]
        self.shift = params.constant_slippage
        nus = params.nus
        if self.shift:
            self.tables = [_ShiftTable(params.protocol, b, nu) for b, nu in zip(params.buckets, nus)]
        else:
            self.tables = [_GridTable(params.protocol, b, nu, self.two_d)
                           for b, nu in zip(params.buckets, nus)]

    # jump operators -------------------------------------------------------
    def operators(self, V):
        if not self.two_d:
            return V, np.zeros_like(V)
        # a + w (b - a) keeps J exactly zero on R-constant rows
        Va = V[:, self.ia] + self.wa * (V[:, self.ia + 1] - V[:, self.ia])
        Vr = V[:, self.ir] + self.wr * (V[:, self.ir + 1] - V[:, self.ir])
        return Va, Vr - V

    def _channel_p(self, V, Va, z):
        """Accept marginals (bid, ask) on the valid row ranges [0, nq-z) and [z, nq)."""
        p_bid = (V[:-z] - Va[z:]) / z
        p_ask = (V[z:] - Va[:-z]) / z
        return p_bid, p_ask

    def hamiltonian_sum(self, V, with_intensity=False):
        Va, J = self.operators(V)
        if self.two_d:
            jmin = float(J.min())
            for tab in self.tables:
                tab.ensure(jmin)
        S = np.zeros_like(V)
        lam_total = np.zeros_like(V) if with_intensity else None
        for n, (z, k, tab) in enumerate(zip(self.sizes, self.kappas, self.tables)):
            p_bid, p_ask = self._channel_p(V, Va, z)
            Hb = np.zeros_like(V)
            Ha = np.zeros_like(V)
            if self.shift:
                h0 = tab.h0(J) if self.two_d else tab.h_zero
                if np.ndim(h0) == 0:
                    Hb[:-z] = np.exp(-k * p_bid) * h0
                    Ha[z:] = np.exp(-k * p_ask) * h0
                else:
                    Hb[:-z] = np.exp(-k * p_bid) * h0[:-z]
                    Ha[z:] = np.exp(-k * p_ask) * h0[z:]
            else:
                Hb[:-z] = tab.full_value(p_bid, J[:-z])
                Ha[z:] = tab.full_value(p_ask, J[z:])
            S += Hb + Ha
            if with_intensity:
                lb = np.zeros_like(V)
                la = np.zeros_like(V)
                if self.shift:
                    lam0 = tab.intensity0(J)
                    lb[:-z] = np.exp(-k * p_bid) * lam0[:-z]
                    la[z:] = np.exp(-k * p_ask) * lam0[z:]
                else:
                    lb[:-z] = tab.intensity(p_bid, J[:-z])
                    la[z:] = tab.intensity(p_ask, J[z:])
                lam_total += lb + la
        return S, lam_total, J

    def step(self, V, dt):
        S, _, _ = self.hamiltonian_sum(V)
        return V + dt * (self.g * S - self.penalty)

    def check_stability(self, V, dt):
        _, lam, _ = self.hamiltonian_sum(V, with_intensity=True)
        rate = float(np.max(self.g * lam))
        if dt * rate > 1.0:
            raise StabilityViolation(
                f"dt * max intensity = {dt * rate:.3g} > 1 (dt = {dt:.3g} day, rate = {rate:.4g}/day)")
        return rate

    def _proxy(self, V):
        """Control proxy (p per channel and J/z) used for the stationarity test."""
        Va, J = self.operators(V)
        parts = []
        for z in self.sizes:
            pb, pa = self._channel_p(V, Va, z)
            parts += [pb.ravel(), pa.ravel(), (J / z).ravel()]
        return np.concatenate(parts)

    def run(self, horizon: float | None = None, stationary: bool = False,
            check_every: float = 0.005, strict: bool = False) -> Solution:
        """Integrate backward from V(T) = 0.

        Finite horizon: exactly ``horizon`` days (default params.horizon).
        Stationary: until the control proxy changes by less than
        ``stationarity_tol`` bp/day or ``max_time`` days have elapsed; the value
        after ``params.horizon`` days is kept for utility reporting.
        """
        params, grid = self.params, self.grid
        T_report = params.horizon if horizon is None else horizon
        if stationary:
            dt = grid.dt
            report_step = max(1, int(round(T_report / dt)))
            max_steps = int(math.ceil(grid.max_time / dt))
        else:
            n = max(1, int(math.ceil(T_report / grid.dt - 1e-9)))
            dt = T_report / n
            report_step = max_steps = n
        every = max(1, int(round(check_every / dt)))
        V = np.zeros((self.nq, self.nR))
        self.check_stability(V, dt)
        horizon_V = None
        proxy_prev = self._proxy(V) if stationary else None
        converged = not stationary
        rate = None
        V_prev_check = V
        last_check = 0
        step = 0
        while step < max_steps:
            V = self.step(V, dt)
            step += 1
            if step == report_step:
                horizon_V = V.copy()
            if step % every == 0 or step == max_steps:
                if not np.all(np.isfinite(V)):
                    raise NonFiniteValue(f"non-finite value after {step} steps")
                self.check_stability(V, dt)
                if stationary:
                    proxy = self._proxy(V)
                    span = (step - last_check) * dt
                    last_check = step
                    change = float(np.max(np.abs(proxy - proxy_prev))) / span
                    proxy_prev = proxy
                    mid = self.nq // 2
                    rate = float(np.mean(V[mid] - V_prev_check[mid])) / span
                    V_prev_check = V.copy()
                    if change < grid.stationarity_tol and step >= report_step:
                        converged = True
                        break
        if stationary and not converged:
            msg = f"controls still drifting after {step * dt:.3g} days"
            if strict:
                raise NoConvergence(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        if horizon_V is None:
            horizon_V = V.copy()
        surface = ValueSurface(self.q, self.R, V, t=0.0)
        policy = self.extract_policy(V)
        n_pos = int(np.sum(policy.J > 1e-9))
        return Solution(
            params=params, grid=grid, value=surface, policy=policy,
            horizon_value=ValueSurface(self.q, self.R, horizon_V, t=0.0),
            elapsed=step * dt, steps=step, converged=converged, growth_rate=rate,
            positive_J_nodes=n_pos, diagnostics={"dt": dt, "two_d": self.two_d},
        )

    # policy ------------------------------------------------------------
    def extract_policy(self, V) -> PolicySurface:
        params = self.params
        Va, J = self.operators(V)
        nb = len(params.buckets)
        shape = (nb, 2, self.nq, self.nR)
        delta = np.full(shape, np.nan)
        control = np.full(shape, np.nan)
        accept = np.full(shape, np.nan)
        p_all = np.full(shape, np.nan)
        valid = np.zeros(shape, dtype=bool)
        nus = params.nus
        for n, (bucket, nu, z) in enumerate(zip(params.buckets, nus, self.sizes)):
            p_bid, p_ask = self._channel_p(V, Va, z)
            p_all[n, BID, :-z] = p_bid
            p_all[n, ASK, z:] = p_ask
            valid[n, BID, :-z] = True
            valid[n, ASK, z:] = True
            if self.shift:
                my = protocols.myopic(params.protocol, bucket, nu, J)
                for side in (BID, ASK):
                    m = valid[n, side]
                    delta[n, side][m] = p_all[n, side][m] + my.delta_bar[m]
                    control[n, side][m] = my.control[m]
                    accept[n, side][m] = my.accept_prob[m]
            else:
                for side in (BID, ASK):
                    m = valid[n, side]
                    c = protocols.optimize_vec(params.protocol, bucket, nu, p_all[n, side][m], J[m])
                    delta[n, side][m] = c.delta
                    control[n, side][m] = c.control
                    accept[n, side][m] = c.accept_prob
        lam0 = params.intensities[:, None, None, None]
        kap = params.decays[:, None, None, None]
        g = params.flow_factor(self.R)
        intensity = np.where(valid, g * lam0 * np.exp(-kap * np.where(valid, delta, 0.0)), 0.0)
        return PolicySurface(params.protocol, params.sizes.astype(int), self.q, self.R, delta,
                             control, accept, p_all, J, intensity, valid)


@lru_cache(maxsize=8)
def _solver(params: ModelParams, grid: GridSpec, two_d) -> HJBSolver:
    return HJBSolver(params, grid, two_d)


def step_backward(surface: ValueSurface, params: ModelParams, grid: GridSpec) -> ValueSurface:
    """One explicit step of length grid.dt from ``surface`` (2-D lattice)."""
    solver = _solver(params, grid, len(surface.r_nodes) > 1)
    solver.check_stability(surface.values, grid.dt)
    V = solver.step(surface.values, grid.dt)
    if not np.all(np.isfinite(V)):
        raise NonFiniteValue("non-finite value after step")
    return ValueSurface(surface.q_nodes, surface.r_nodes, V, surface.t - grid.dt)


def solve_horizon(params: ModelParams, grid: GridSpec, two_d: bool | None = None,
                  horizon: float | None = None) -> Solution:
    """Finite-horizon solve; controls are those at t = 0."""
    return HJBSolver(params, grid, two_d).run(horizon=horizon)


def solve_stationary(params: ModelParams, grid: GridSpec, two_d: bool | None = None,
                     strict: bool = False) -> Solution:
    return HJBSolver(params, grid, two_d).run(stationary=True, strict=strict)


def extract_policy(surface: ValueSurface, params: ModelParams, grid: GridSpec) -> PolicySurface:
    solver = _solver(params, grid, len(surface.r_nodes) > 1)
    return solver.extract_policy(surface.values)


# ---------------------------------------------------------------------------
# reporting


def stationary_reputation(policy: PolicySurface, q: int = 0) -> float:
    """Fixed point R* = r(q, R*) of the weighted rejection rate along the R lattice."""
    iq = _q_index(policy.q_nodes, q)
    r = policy.rejection_rate()[iq]
    if len(policy.r_nodes) == 1:
        return float(r[0])
    f = r - policy.r_nodes
    if f[0] <= 0.0:
        return 0.0
    j = int(np.argmax(f <= 0.0))
    if f[j] > 0.0:
        return 1.0
    s = f[j - 1] / (f[j - 1] - f[j])
    return float(policy.r_nodes[j - 1] + s * (policy.r_nodes[j] - policy.r_nodes[j - 1]))


def report_metrics(solution: Solution, q: int = 0, R: float | None = None) -> MetricsRow:
    """Top-of-book metrics at (q, R); R defaults to the stationary R*."""
    pol = solution.policy
    if R is None:
        R = stationary_reputation(pol, q)
    iq = _q_index(pol.q_nodes, q)
    at = lambda arr: float(_interp_r(pol.r_nodes, arr[iq], R))  # noqa: E731
    spread = at(pol.delta[0, BID]) + at(pol.delta[0, ASK])
    if pol.protocol is Protocol.UNCONSTRAINED:
        threshold = -at(pol.control[0, BID])
    elif pol.protocol is Protocol.FAIR:
        threshold = at(pol.control[0, BID])
    else:
        threshold = math.inf
    rejection = 1.0 - at(pol.accept_prob[0, BID])
    weighted = at(pol.rejection_rate())
    utility = solution.horizon_value.at(q, R)
    return MetricsRow(q, float(R), spread, threshold, rejection, weighted, utility)


# ---------------------------------------------------------------------------
# forward occupancy under a fixed policy


def generator(policy: PolicySurface, params: ModelParams) -> sparse.csr_matrix:
    """Rate matrix of the (q, R) chain driven by ``policy`` (rows sum to zero).

    A request on channel (n, side) fills with the policy's acceptance
    probability, moving q by +/- z_n and R to (1 - rho) R; otherwise R moves
    to (1 - rho) R + rho. Off-node reputation images are split linearly
    between the neighbouring nodes, which preserves the mean of R.
    """
    nR = len(policy.r_nodes)
    if nR < 2:
        raise InvariantViolation("occupancy needs a reputation lattice (rho_g > 0 or two_d)")
    nq = len(policy.q_nodes)
    rep = params.reputation
    ia, wa = _interp_weights(rep.after_accept(policy.r_nodes), nR)
    ir, wr = _interp_weights(rep.after_reject(policy.r_nodes), nR)
    iq, jR = np.meshgrid(np.arange(nq), np.arange(nR), indexing="ij")
    src = iq * nR + jR
    rows, cols, vals = [], [], []
    for n, z in enumerate(policy.sizes):
        for side, dq in ((BID, int(z)), (ASK, -int(z))):
            m = policy.valid[n, side]
            lam = policy.intensity[n, side][m]
            acc = np.clip(policy.accept_prob[n, side][m], 0.0, 1.0)
            s_ = src[m]
            qa = iq[m] + dq
            j = jR[m]
            for target, rate in (
                (qa * nR + ia[j], lam * acc * (1.0 - wa[j])),
                (qa * nR + ia[j] + 1, lam * acc * wa[j]),
                (iq[m] * nR + ir[j], lam * (1.0 - acc) * (1.0 - wr[j])),
                (iq[m] * nR + ir[j] + 1, lam * (1.0 - acc) * wr[j]),
            ):
                rows.append(s_)
                cols.append(target)
                vals.append(rate)
    rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
    N = nq * nR
    Q = sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    Q = Q - sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


def stationary_occupancy(policy: PolicySurface, params: ModelParams) -> np.ndarray:
    """Stationary distribution pi(q, R) of the policy-driven chain."""
    Q = generator(policy, params)
    A = Q.T.tolil()
    A[0, :] = 1.0
    b = np.zeros(Q.shape[0])
    b[0] = 1.0
    pi = spsolve(A.tocsc(), b)
    pi = np.clip(pi, 0.0, None)
    return (pi / pi.sum()).reshape(len(policy.q_nodes), len(policy.r_nodes))


def transient_occupancy(policy: PolicySurface, params: ModelParams, t: float, q0: int = 0,
                        R0: float = 0.0) -> np.ndarray:
    """Distribution of (q, R) at time ``t`` from (q0, R0); R0 is split linearly."""
    nq, nR = len(policy.q_nodes), len(policy.r_nodes)
    p0 = np.zeros((nq, nR))
    i = _q_index(policy.q_nodes, q0)
    j, w = _interp_weights(np.array([R0]), nR)
    p0[i, j[0]] += 1.0 - w[0]
    p0[i, j[0] + 1] += w[0]
    Q = generator(policy, params)
    p = expm_multiply(Q.T * t, p0.ravel())
    return np.clip(p, 0.0, None).reshape(nq, nR)


def mean_reputation(occupancy: np.ndarray, r_nodes) -> float:
    return float(np.sum(occupancy * np.asarray(r_nodes)[None, :]) / occupancy.sum())


def value_rows(surface: ValueSurface):
    for i, q in enumerate(surface.q_nodes):
        for j, R in enumerate(surface.r_nodes):
            yield int(q), float(R), float(surface.values[i, j])


def policy_rows(policy: PolicySurface):
    """Rows of (bucket, side, q, R, delta, control, accept_prob) for valid channels."""
    for n in range(policy.delta.shape[0]):
        for side, name in ((BID, "bid"), (ASK, "ask")):
            for i, q in enumerate(policy.q_nodes):
                for j, R in enumerate(policy.r_nodes):
                    if policy.valid[n, side, i, j]:
                        yield (n + 1, name, int(q), float(R), float(policy.delta[n, side, i, j]),
                               float(policy.control[n, side, i, j]),
                               float(policy.accept_prob[n, side, i, j]))
