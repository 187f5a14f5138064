"""Experiment drivers: the protocol comparison table and figure data sets.

Every driver returns plain rows (tuples or dataclasses) so the CLI can
write CSV and the tests can check values without touching files.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import adiabatic, hjb
from .config import GridSpec, ModelParams, Protocol, default_grid, preset

RHO_G_SWEEP = (0.0, 0.05, 0.10, 0.15, 0.20)
LATENCIES_S = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
TABLE1_TOL = {"spread_bp": 0.03, "threshold_bp": 0.03, "rejection": 0.02}
UTILITY_RATIO_TOL = 0.02
_MODEL_PROTOCOL = {
    "no_rejection_no_adverse": Protocol.NONE,
    "no_rejection": Protocol.NONE,
    "unconstrained": Protocol.UNCONSTRAINED,
    "symmetric": Protocol.FAIR,
}


def solve(params: ModelParams, grid: GridSpec | None = None, stationary: bool = False) -> hjb.Solution:
    grid = default_grid() if grid is None else grid
    if stationary:
        return hjb.solve_stationary(params, grid)
    return hjb.solve_horizon(params, grid)


def with_protocol(params: ModelParams, protocol) -> ModelParams:
    return dataclasses.replace(params, protocol=Protocol(protocol))


# ---------------------------------------------------------------------------
# protocol comparison table


@dataclass(frozen=True)
class Table1Row:
    model: str
    rho_g: float
    spread_bp: float
    threshold_bp: float
    rejection: float
    utility: float
    R_star: float = 0.0


@dataclass(frozen=True)
class DiffCell:
    model: str
    rho_g: float
    column: str
    ours: float
    reference: float
    tolerance: float
    ok: bool


def table1_cases() -> list[tuple[str, float]]:
    cases = [("no_rejection_no_adverse", 0.0), ("no_rejection", 0.0)]
    cases += [("unconstrained", r) for r in RHO_G_SWEEP]
    cases += [("symmetric", r) for r in RHO_G_SWEEP]
    return cases


def table1_params(model: str, rho_g: float, base: ModelParams | None = None) -> ModelParams:
    params = preset("table1_tau1s") if base is None else base
    params = with_protocol(params, _MODEL_PROTOCOL[model]).with_reputation(flow_decay=rho_g)
    if model == "no_rejection_no_adverse":
        params = params.with_buckets(toxicity=0.0)
    return params


def table1_row(model: str, rho_g: float, grid: GridSpec | None = None,
               base: ModelParams | None = None) -> Table1Row:
    sol = solve(table1_params(model, rho_g, base), grid)
    m = hjb.report_metrics(sol)
    return Table1Row(model, rho_g, m.spread, m.threshold, m.rejection, m.utility, m.R)


def table1(grid: GridSpec | None = None, base: ModelParams | None = None, progress=None) -> list[Table1Row]:
    rows = []
    for model, rho_g in table1_cases():
        rows.append(table1_row(model, rho_g, grid, base))
        if progress is not None:
            progress(rows[-1])
    return rows


def load_table1_reference() -> list[Table1Row]:
    text = resources.files("lastlook").joinpath("data/table1_reference.csv").read_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(Table1Row(rec["model"], float(rec["rho_g"]), float(rec["spread_bp"]),
                             float(rec["threshold_bp"]), float(rec["rejection"]), float(rec["utility"])))
    return out


def _key(row):
    return row.model, round(row.rho_g, 6)


def table1_diff(rows: list[Table1Row], reference: list[Table1Row] | None = None) -> list[DiffCell]:
    """Cell-by-cell comparison: absolute tolerances on spread, threshold and
    rejection; utilities as ratios to the no-rejection row."""
    reference = load_table1_reference() if reference is None else reference
    ref = {_key(r): r for r in reference}
    ours = {_key(r): r for r in rows}
    base_ours = ours.get(("no_rejection", 0.0))
    base_ref = ref[("no_rejection", 0.0)]
    cells = []
    for key, r in ours.items():
        p = ref.get(key)
        if p is None:
            continue
        for col, tol in TABLE1_TOL.items():
            a, b = getattr(r, col), getattr(p, col)
            ok = (a == b) if math.isinf(b) or math.isinf(a) else abs(a - b) <= tol
            cells.append(DiffCell(r.model, r.rho_g, col, a, b, tol, bool(ok)))
        if base_ours is not None:
            a = r.utility / base_ours.utility
            b = p.utility / base_ref.utility
            cells.append(DiffCell(r.model, r.rho_g, "utility_ratio", a, b, UTILITY_RATIO_TOL,
                                  bool(abs(a / b - 1.0) <= UTILITY_RATIO_TOL)))
    return cells


def utility_ordering_holds(rows: list[Table1Row]) -> bool:
    """235.4 > 201.7 > 199.4 > 195.1 pattern at rho_g = 0."""
    u = {_key(r): r.utility for r in rows}
    seq = [u[("no_rejection_no_adverse", 0.0)], u[("unconstrained", 0.0)],
           u[("symmetric", 0.0)], u[("no_rejection", 0.0)]]
    return all(a > b for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# figure data


@dataclass(frozen=True)
class LatencyPoint:
    tau_s: float
    spread_bp: float
    reject_prob: float
    threshold_bp: float
    spread_toxic_no_reject: float
    spread_clean_no_reject: float


def latency_sweep(latencies=LATENCIES_S, grid: GridSpec | None = None,
                  base: ModelParams | None = None) -> list[LatencyPoint]:
    """Top-of-book spread and rejection vs latency (no reputation feedback)."""
    base = preset("latency_sweep") if base is None else base
    base = base.with_reputation(flow_decay=0.0)
    none = with_protocol(base, Protocol.NONE)
    toxic = hjb.report_metrics(solve(none, grid)).spread
    clean = hjb.report_metrics(solve(none.with_buckets(toxicity=0.0), grid)).spread
    out = []
    for tau in latencies:
        params = with_protocol(base, Protocol.UNCONSTRAINED).with_buckets(latency_s=float(tau))
        m = hjb.report_metrics(solve(params, grid))
        out.append(LatencyPoint(float(tau), m.spread, m.rejection, m.threshold, toxic, clean))
    return out


def thresholds_vs_q(params: ModelParams | None = None, grid: GridSpec | None = None, q_span: int = 20):
    """Rows (q, bid_threshold, ask_threshold) for bucket 1; threshold = -y*."""
    params = preset("quote_dependent_beta05") if params is None else params
    pol = solve(params, grid).policy
    rows = []
    for i, q in enumerate(pol.q_nodes):
        if abs(q) <= q_span:
            rows.append((int(q), float(-pol.control[0, hjb.BID, i, 0]), float(-pol.control[0, hjb.ASK, i, 0])))
    return rows


def policy_vs_R(params: ModelParams | None = None, grid: GridSpec | None = None, q: int = 0):
    """Rows (R, spread, threshold, rejection, weighted rejection, J) at inventory q."""
    params = preset("feedback_rho01") if params is None else params
    sol = solve(params, grid)
    rows = []
    for R in sol.policy.r_nodes:
        m = hjb.report_metrics(sol, q, float(R))
        J = float(hjb._interp_r(sol.policy.r_nodes, sol.policy.J[hjb._q_index(sol.policy.q_nodes, q)], R))
        rows.append((float(R), m.spread, m.threshold, m.rejection, m.rejection_weighted, J))
    return rows


@dataclass(frozen=True)
class StationaryPoint:
    rho_g: float
    engine: str
    R_star: float
    spread_bp: float
    threshold_bp: float
    rejection: float


def adiabatic_point(params: ModelParams) -> StationaryPoint:
    sol = adiabatic.stationary_reputation(params)
    b = sol.buckets[0]
    z = params.buckets[0].size
    thr = -b.control if sol.protocol is Protocol.UNCONSTRAINED else b.control
    if sol.protocol is Protocol.NONE:
        thr = math.inf
    return StationaryPoint(params.reputation.flow_decay, "adiabatic", float(sol.R),
                           2.0 * (b.delta_bar + sol.A * z), float(thr), b.reject_prob)


def hjb_point(params: ModelParams, grid: GridSpec | None = None) -> StationaryPoint:
    m = hjb.report_metrics(solve(params, grid))
    return StationaryPoint(params.reputation.flow_decay, "hjb", m.R, m.spread, m.threshold, m.rejection)


def stationary_vs_rhog(rho_gs=RHO_G_SWEEP, base: ModelParams | None = None, grid: GridSpec | None = None,
                       cross_check=(0.05, 0.10, 0.20)) -> list[StationaryPoint]:
    """Adiabatic sweep over rho_g with exact-solver cross-checks at a few values."""
    base = preset("feedback_rho01") if base is None else base
    out = [adiabatic_point(base.with_reputation(flow_decay=r)) for r in rho_gs]
    out += [hjb_point(base.with_reputation(flow_decay=r), grid) for r in cross_check]
    return out


def quotes_vs_q(params: ModelParams | None = None, grid: GridSpec | None = None, q_span: int = 20,
                R: float | None = None):
    """Rows (q, exact bid, exact ask, adiabatic bid, adiabatic ask) for bucket 1 at R*."""
    params = preset("feedback_rho01") if params is None else params
    sol = solve(params, grid)
    pol = sol.policy
    if R is None:
        R = hjb.stationary_reputation(pol)
    approx = adiabatic.reputation_loss(params, R)
    rows = []
    for i, q in enumerate(pol.q_nodes):
        if abs(q) > q_span:
            continue
        eb = float(hjb._interp_r(pol.r_nodes, pol.delta[0, hjb.BID, i], R))
        ea = float(hjb._interp_r(pol.r_nodes, pol.delta[0, hjb.ASK, i], R))
        qs = adiabatic.approx_controls(approx, float(q))[0]
        rows.append((int(q), eb, ea, qs.bid, qs.ask))
    return R, rows


def value_surface(params: ModelParams | None = None, grid: GridSpec | None = None):
    params = preset("feedback_rho01") if params is None else params
    return list(hjb.value_rows(solve(params, grid).value))


# ---------------------------------------------------------------------------
# simulation


def simulation_policy(params: ModelParams | None = None, grid: GridSpec | None = None,
                      engine: str = "hjb") -> tuple[ModelParams, hjb.PolicySurface]:
    """Stationary policy for the simulator (exact solver or adiabatic surrogate)."""
    params = preset("simulation_fair") if params is None else params
    grid = default_grid() if grid is None else grid
    if engine == "adiabatic":
        return params, adiabatic.policy_surface(params, grid)
    return params, hjb.solve_stationary(params, grid).policy


def stationary_mean_R(params: ModelParams, policy: hjb.PolicySurface) -> float:
    """Mean of R under the stationary occupancy of the policy-driven chain."""
    return hjb.mean_reputation(hjb.stationary_occupancy(policy, params), policy.r_nodes)


def relaxation_rows(result):
    t, mean, sd = result.relaxation()
    return [(float(a), float(b), float(c)) for a, b, c in zip(t, mean, sd)]


def rows_as_array(rows) -> np.ndarray:
    return np.array(rows, dtype=float)
