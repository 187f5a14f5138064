"""Monte Carlo simulation of the dealer under a tabulated policy.

The engine steps in units of the (common) latency tau. Each step draws one
mid move dS ~ N(0, sigma^2 tau); the bid mark is Y = dS and the ask mark is
Y = -dS. Requests on channel (n, side) arrive with probability
min(1, lambda tau) where

    lambda = g(R) Lambda0_adj e^{-kappa delta} e^{-alpha Y},
    alpha = theta / (sigma^2 tau),  Lambda0_adj = Lambda0 e^{-alpha^2 sigma^2 tau / 2},

so that the unconditional rate equals g(R) Lambda0 e^{-kappa delta} and
Y | request ~ N(-theta, sigma^2 tau). Channels are resolved in fixed order
(bucket ascending, bid before ask); a later channel sees the state after
earlier fills. The first arrival of a step is sampled by inverting the
no-arrival survival product with a single uniform; channels after it use a
separate uniform stream.

Fills book against the quote formed at the start of the step: an on-rate
bid fill pays S_k - delta, a capped fill (fair protocol, Y > eps) pays
S_{k+1} - delta - eps, and asks mirror this. Random numbers come from
Philox streams keyed by (seed, path, purpose), so every path is
reproducible on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .config import ModelParams, Protocol
from .errors import InvariantViolation, NonFiniteState, PolicyGridBreach, QuoteDependentToxicity, TooFewPaths
from .hjb import PolicySurface
from .protocols import Decision

_PROTO_CODE = {Protocol.NONE: 0, Protocol.UNCONSTRAINED: 1, Protocol.FAIR: 2}
STREAM_MID, STREAM_ARRIVAL, STREAM_EXTRA = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    policy: PolicySurface
    n_paths: int = 50_000
    horizon: float | None = None
    seed: int = 0
    record_paths: bool = False
    q0: int = 0
    R0: float = 0.0
    checkpoints: int = 48

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvariantViolation("n_paths >= 1")
        if self.horizon is not None and not self.horizon > 0:
            raise InvariantViolation("horizon > 0")
        lat = {b.latency_s for b in self.params.buckets}
        if len(lat) != 1 or not lat.pop() > 0:
            raise InvariantViolation("all bucket latencies equal and positive")
        if not self.params.constant_slippage:
            raise QuoteDependentToxicity("simulation tilt requires constant slippage")
        if not 0.0 <= self.R0 <= 1.0:
            raise InvariantViolation("R0 in [0, 1]")

    @property
    def T(self) -> float:
        return self.params.horizon if self.horizon is None else self.horizon

    @property
    def tau(self) -> float:
        return self.params.buckets[0].latency_days

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.tau))


@dataclass
class SimResult:
    utility: np.ndarray
    requests: np.ndarray        # (paths, buckets, 2)
    accepts: np.ndarray         # (paths, buckets, 2), capped included
    capped: np.ndarray          # (paths, buckets, 2)
    terminal_q: np.ndarray
    terminal_R: np.ndarray
    expected_requests: np.ndarray
    mark_sum: np.ndarray
    mark_sumsq: np.ndarray
    checkpoint_t: np.ndarray
    checkpoint_R: np.ndarray    # (paths, checkpoints)
    extras: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return len(self.utility)

    @property
    def total_requests(self) -> np.ndarray:
        return self.requests.sum(axis=(1, 2))

    @property
    def rejects(self) -> np.ndarray:
        return (self.requests - self.accepts).sum(axis=(1, 2))

    @property
    def realized_reject_rate(self) -> np.ndarray:
        n = self.total_requests
        return np.where(n > 0, self.rejects / np.maximum(n, 1), 0.0)

    def mean_se(self, x) -> tuple[float, float]:
        x = np.asarray(x, dtype=float)
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    def relaxation(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(t, mean R, sd R) across paths at each checkpoint."""
        R = self.checkpoint_R
        return self.checkpoint_t, R.mean(axis=0), R.std(axis=0, ddof=1) if len(R) > 1 else 0 * R[0]


def ema_update(R: float, decision, rho: float) -> float:
    """R+ = (1 - rho) R + rho 1{reject}; capped accepts count as accepts."""
    rejected = Decision(decision) is Decision.REJECT
    out = (1.0 - rho) * R + (rho if rejected else 0.0)
    return min(1.0, max(0.0, out))


def tilt_parameters(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(alpha_n, Lambda0_adj_n) for the exponential tilt."""
    tau = params.buckets[0].latency_days
    var = params.sigma ** 2 * tau
    alpha = params.toxicities / var
    lam_adj = params.intensities * np.exp(-0.5 * alpha * alpha * var)
    return alpha, lam_adj


# ---------------------------------------------------------------------------
# numba kernel


@numba.njit(cache=True, inline="always")
def _lookup(table, n, s, iq, jR, w, nR):
    if nR == 1:
        return table[n, s, iq, 0]
    return table[n, s, iq, jR] * (1.0 - w) + table[n, s, iq, jR + 1] * w


@numba.njit(cache=True)
def _simulate_path(normals, uniforms, extra, delta, control, valid, sizes, kappa, lam0, lam_adj,
                   alpha, rho, rho_g, tau, sd, gamma_sig2, proto, q_max, q0, R0, ckpt_every,
                   out_counts, out_R, fill_log):
    nb = sizes.shape[0]
    nR = delta.shape[3]
    n_ch = 2 * nb
    n_steps = normals.shape[0]
    q = q0
    R = R0
    X = 0.0
    S = 0.0
    pen = 0.0
    expected = 0.0
    ysum = 0.0
    ysq = 0.0
    n_extra = 0
    n_fill = 0
    base = np.zeros(n_ch)
    base0 = np.zeros(n_ch)
    dq = np.zeros(n_ch)
    ctl = np.zeros(n_ch)
    tilt = np.zeros(n_ch)
    dirty = True
    base0_sum = 0.0
    k_ck = 0
    for k in range(n_steps):
        dS = sd * normals[k]
        for n in range(nb):
            e = math.exp(-alpha[n] * dS)
            tilt[2 * n] = e
            tilt[2 * n + 1] = 1.0 / e
        if dirty:
            base0_sum = _refresh(base, base0, dq, ctl, q, R, delta, control, valid, sizes, kappa,
                                 lam0, lam_adj, rho_g, tau, q_max, nR)
            dirty = False
        # first arrival by inverting the survival product
        u = uniforms[k]
        surv = 1.0
        first = -1
        for c in range(n_ch):
            p = base[c] * tilt[c]
            if p > 1.0:
                p = 1.0
            surv *= 1.0 - p
            if u >= surv:
                first = c
                break
        if first < 0:
            expected += base0_sum
        else:
            for c in range(first + 1):
                expected += base0[c]
            c = first
            while c < n_ch:
                if c > first:
                    if dirty:
                        base0_sum = _refresh(base, base0, dq, ctl, q, R, delta, control, valid,
                                             sizes, kappa, lam0, lam_adj, rho_g, tau, q_max, nR)
                        dirty = False
                    expected += base0[c]
                    p = base[c] * tilt[c]
                    if p > 1.0:
                        p = 1.0
                    if n_extra >= extra.shape[0]:
                        return -1.0, 0.0, 0.0, 0, R, 0.0, 0.0, 0.0, n_fill
                    hit = extra[n_extra] < p
                    n_extra += 1
                    if not hit:
                        c += 1
                        continue
                n = c // 2
                side = c % 2
                z = sizes[n]
                Y = dS if side == 0 else -dS
                d = dq[c]
                ctrl = ctl[c]
                ysum += Y
                ysq += Y * Y
                out_counts[n, side, 0] += 1
                if proto == 1:
                    outcome = 1 if Y >= ctrl else 0
                elif proto == 2:
                    if Y < -ctrl:
                        outcome = 0
                    elif Y <= ctrl:
                        outcome = 1
                    else:
                        outcome = 2
                else:
                    outcome = 1
                if outcome == 0:
                    R = (1.0 - rho) * R + rho
                else:
                    out_counts[n, side, 1] += 1
                    if outcome == 2:
                        out_counts[n, side, 2] += 1
                        # capped: execution moves with the mid, dealer keeps delta + eps
                        if side == 0:
                            X -= z * (S + dS - d - ctrl)
                        else:
                            X += z * (S + dS + d + ctrl)
                    else:
                        if side == 0:
                            X -= z * (S - d)
                        else:
                            X += z * (S + d)
                    q += z if side == 0 else -z
                    R = (1.0 - rho) * R
                    if n_fill < fill_log.shape[0]:
                        fill_log[n_fill, 0] = k
                        fill_log[n_fill, 1] = side
                        fill_log[n_fill, 2] = z
                        fill_log[n_fill, 3] = d
                        fill_log[n_fill, 4] = ctrl
                        fill_log[n_fill, 5] = 1.0 if outcome == 2 else 0.0
                    n_fill += 1
                if R > 1.0:
                    R = 1.0
                if R < 0.0:
                    R = 0.0
                if q > q_max or q < -q_max:
                    return -2.0, 0.0, 0.0, q, R, 0.0, 0.0, 0.0, n_fill
                dirty = True
                c += 1
        S += dS
        pen += q * q * tau
        if (k + 1) % ckpt_every == 0 and k_ck < out_R.shape[0]:
            out_R[k_ck] = R
            k_ck += 1
    pnl = X + q * S
    utility = pnl - 0.5 * gamma_sig2 * pen
    if not (math.isfinite(utility) and math.isfinite(R)):
        return -3.0, 0.0, 0.0, q, R, 0.0, 0.0, 0.0, n_fill
    return 0.0, utility, pnl, q, R, expected, ysum, ysq, n_fill


@numba.njit(cache=True)
def _refresh(base, base0, dq, ctl, q, R, delta, control, valid, sizes, kappa, lam0, lam_adj, rho_g,
             tau, q_max, nR):
    """Quotes and per-step arrival probabilities at state (q, R); returns the baseline sum."""
    iq = q + q_max
    if nR > 1:
        pos = R * (nR - 1)
        jR = min(int(math.floor(pos)), nR - 2)
        w = pos - jR
    else:
        jR = 0
        w = 0.0
    g = math.exp(-rho_g * R)
    total = 0.0
    for n in range(sizes.shape[0]):
        for side in range(2):
            c = 2 * n + side
            if not valid[n, side, iq, jR] or (nR > 1 and not valid[n, side, iq, jR + 1]):
                base[c] = 0.0
                base0[c] = 0.0
                continue
            d = _lookup(delta, n, side, iq, jR, w, nR)
            dq[c] = d
            ctl[c] = _lookup(control, n, side, iq, jR, w, nR)
            e = g * math.exp(-kappa[n] * d) * tau
            base[c] = lam_adj[n] * e
            base0[c] = lam0[n] * e
            total += base0[c]
    return total


# ---------------------------------------------------------------------------


def path_streams(seed: int, path: int, n_steps: int, n_extra: int):
    """(normals, uniforms, extra uniforms) from Philox keyed by (seed, path, purpose)."""
    def gen(purpose):
        key = np.array([seed & 0xFFFFFFFFFFFFFFFF, (path << 8) | purpose], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    normals = gen(STREAM_MID).standard_normal(n_steps)
    uniforms = gen(STREAM_ARRIVAL).random(n_steps)
    extra = gen(STREAM_EXTRA).random(n_extra)
    return normals, uniforms, extra


def simulate(cfg: SimConfig) -> SimResult:
    params, pol = cfg.params, cfg.policy
    q_max = int(pol.q_nodes[-1])
    if abs(cfg.q0) > q_max:
        raise PolicyGridBreach(f"q0 = {cfg.q0} outside policy grid")
    tau = cfg.tau
    n_steps = cfg.n_steps
    alpha, lam_adj = tilt_parameters(params)
    sd = params.sigma * math.sqrt(tau)
    ctrl = np.where(np.isfinite(pol.control), pol.control, -1e300)
    delta = np.where(pol.valid, pol.delta, 0.0)
    valid = pol.valid.copy()
    sizes = np.array([b.size for b in params.buckets], dtype=np.int64)
    nb = len(sizes)
    n_ck = max(1, min(cfg.checkpoints, n_steps))
    ckpt_every = max(1, n_steps // n_ck)
    n_ck = n_steps // ckpt_every
    # pool for channels after the first arrival in a step; resized on exhaustion
    rate = float(np.max(pol.total_intensity()[q_max])) * tau
    n_extra = int(2 * rate * n_steps * 2 * nb) + 1024
    P = cfg.n_paths
    utility = np.empty(P)
    pnl = np.empty(P)
    counts = np.zeros((P, nb, 2, 3), dtype=np.int64)
    tq = np.empty(P, dtype=np.int64)
    tR = np.empty(P)
    expected = np.empty(P)
    ysum = np.empty(P)
    ysq = np.empty(P)
    ckR = np.zeros((P, n_ck))
    gsig2 = params.gamma * params.sigma ** 2
    rep = params.reputation
    proto = _PROTO_CODE[Protocol(pol.protocol)]
    logs = {}
    no_log = np.zeros((0, 6))
    for i in range(P):
        size = n_extra
        log_rows = 4 * int(rate * n_steps * 2 * nb) + 64 if cfg.record_paths else 0
        while True:
            normals, uniforms, extra = path_streams(cfg.seed, i, n_steps, size)
            fill_log = np.zeros((log_rows, 6)) if cfg.record_paths else no_log
            status, u, pl, qT, RT, ex, ys, yq, nf = _simulate_path(
                normals, uniforms, extra, delta, ctrl, valid, sizes, params.decays,
                params.intensities, lam_adj, alpha, rep.ema_weight, rep.flow_decay, tau, sd,
                gsig2, proto, q_max, cfg.q0, cfg.R0, ckpt_every, counts[i], ckR[i], fill_log)
            if status == 0.0 and cfg.record_paths and nf > log_rows:
                counts[i] = 0
                ckR[i] = 0
                log_rows = 2 * nf
                continue
            if status == -1.0:
                counts[i] = 0
                ckR[i] = 0
                size *= 4
                continue
            break
        if status == -2.0:
            raise PolicyGridBreach(f"path {i} left the inventory grid")
        if status == -3.0:
            raise NonFiniteState(f"path {i} produced a non-finite state")
        utility[i], pnl[i], tq[i], tR[i], expected[i], ysum[i], ysq[i] = u, pl, qT, RT, ex, ys, yq
        if cfg.record_paths:
            S_path = np.concatenate(([0.0], np.cumsum(sd * normals)))
            logs[i] = (fill_log[:nf].copy(), S_path)
    t = tau * ckpt_every * np.arange(1, n_ck + 1)
    return SimResult(utility, counts[..., 0], counts[..., 1], counts[..., 2], tq, tR, expected,
                     ysum, ysq, t, ckR, extras={"pnl": pnl, "fills": logs})


@dataclass(frozen=True)
class BinRow:
    bin_rejection_rate: float
    mean_utility: float
    stderr: float


def ensemble_stats(result: SimResult, bins: int = 50) -> list[BinRow]:
    """Sort paths by realized rejection rate and average utility in equal consecutive blocks."""
    n = result.n_paths
    if bins < 1 or n < bins:
        raise TooFewPaths(f"{n} paths cannot fill {bins} bins")
    rate = result.realized_reject_rate
    order = np.lexsort((np.arange(n), rate))
    rows = []
    for block in np.array_split(order, bins):
        u = result.utility[block]
        se = float(u.std(ddof=1) / math.sqrt(len(u))) if len(u) > 1 else 0.0
        rows.append(BinRow(float(rate[block].mean()), float(u.mean()), se))
    return rows


def replay_cash(fills, S_path) -> float:
    """Independent accountant for X_T + q_T S_T from a fill log (paths start flat).

    Rows are (step, side, size, delta, control, capped); side 0 is a bid.
    Each fill earns z (delta + slippage) marked at the post-step mid, with
    slippage capped at eps for capped fills, and the acquired position is
    then revalued to the terminal mid.
    """
    total = 0.0
    S_T = S_path[-1]
    for step, side, z, d, ctrl, capped in fills:
        step = int(step)
        S_k, S_k1 = S_path[step], S_path[step + 1]
        sign = 1.0 if side == 0 else -1.0
        slip = ctrl if capped else sign * (S_k1 - S_k)
        total += z * (d + slip) + sign * z * (S_T - S_k1)
    return total
