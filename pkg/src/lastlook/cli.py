"""Command-line front end.

    lastlook solve    --preset table1_tau1s --protocol unconstrained --rho_g 0
    lastlook approx   --preset feedback_rho01
    lastlook simulate --preset simulation_fair --paths 50000 --seed 7
    lastlook table1   --out results/
    lastlook figures  latency_sweep --out results/
    lastlook validate

Exit codes: 0 success, 1 numerical failure, 2 configuration error,
3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, adiabatic, experiments, hjb, simulator, validation
from .config import (PRESET_NAMES, Protocol, apply_overrides, config_hash, default_grid,
                     load_config, preset)
from .errors import ConfigError, LastLookError, MissingKey, NumericalError, UnknownFigure

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2, 3
FIGURES = ("latency_sweep", "thresholds_vs_q", "policy_vs_R", "stationary_vs_rhog",
           "quotes_vs_q", "value_surface", "sim_relaxation", "sim_utility")
_FIGURE_PRESET = {
    "latency_sweep": "latency_sweep",
    "thresholds_vs_q": "quote_dependent_beta05",
    "policy_vs_R": "feedback_rho01",
    "stationary_vs_rhog": "feedback_rho01",
    "quotes_vs_q": "feedback_rho01",
    "value_surface": "feedback_rho01",
    "sim_relaxation": "simulation_fair",
    "sim_utility": "simulation_fair",
}
_SHORTCUTS = (("protocol", "protocol"), ("rho_g", "rho_g"), ("theta", "theta"), ("tau", "tau_seconds"),
              ("horizon", "horizon_days"))


# ---------------------------------------------------------------------------
# plumbing


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_manifest(args, default_preset: str | None = None):
    """(params, grid, source label) from --config/--preset plus overrides."""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingKey(f"config file {path}")
        params, grid = load_config(path)
        source = str(path)
    else:
        name = args.preset or default_preset
        if name is None:
            raise MissingKey("config (pass --config PATH or --preset NAME)")
        params, grid = preset(name), default_grid()
        source = name
    overrides = _parse_set(args.set)
    for flag, key in _SHORTCUTS:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        params, grid = apply_overrides(params, grid, overrides)
    return params, grid, source


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_csv(path: Path, header, rows, params=None, grid=None, seed=None, command="") -> Path:
    """CSV with a provenance comment line (config hash, seed, version) and a header."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tag = config_hash(params, grid) if params is not None else "none"
    with open(path, "w", newline="") as fh:
        fh.write(f"# lastlook {__version__} command={command} config_hash={tag} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _say(msg):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    if args.engine == "adiabatic":
        return cmd_approx(args)
    params, grid, _ = load_manifest(args)
    sol = experiments.solve(params, grid, stationary=args.stationary)
    m = hjb.report_metrics(sol)
    out = Path(args.out)
    meta = dict(params=params, grid=grid, seed=args.seed, command="solve")
    write_csv(out / "value.csv", ("q", "R", "V"), hjb.value_rows(sol.value), **meta)
    write_csv(out / "policy.csv", ("bucket", "side", "q", "R", "delta", "control", "accept_prob"),
              hjb.policy_rows(sol.policy), **meta)
    write_csv(out / "metrics.csv", ("q", "R", "spread_bp", "threshold_bp", "rejection",
                                    "rejection_weighted", "utility"),
              [(m.q, m.R, m.spread, m.threshold, m.rejection, m.rejection_weighted, m.utility)], **meta)
    _say(f"spread={m.spread:.4f} threshold={m.threshold:.4f} rejection={m.rejection:.4f} "
         f"R*={m.R:.4f} utility={m.utility:.2f}")
    if args.stationary and not sol.converged:
        _say("warning: controls had not settled at max_time")
    return EXIT_OK


def cmd_approx(args) -> int:
    params, grid, _ = load_manifest(args)
    sol = adiabatic.stationary_reputation(params)
    out = Path(args.out)
    meta = dict(params=params, grid=grid, seed=args.seed, command="approx")
    rows = [(b.size, m.delta_bar, m.control, m.accept_prob, m.h0, m.h_pp)
            for b, m in zip(params.buckets, sol.buckets)]
    write_csv(out / "myopic.csv", ("size", "delta_bar", "control", "accept_prob", "h0", "h_pp"), rows, **meta)
    quotes = []
    for q in grid.q_nodes:
        for qs in adiabatic.approx_controls(sol, float(q)):
            quotes.append((int(q), qs.size, qs.bid, qs.ask, qs.threshold))
    write_csv(out / "approx_quotes.csv", ("q", "size", "bid", "ask", "threshold"), quotes, **meta)
    write_csv(out / "approx_summary.csv", ("R_star", "J", "A", "Sigma", "g", "r_bar"),
              [(sol.R, sol.J, sol.A, sol.Sigma, sol.g, sol.r_bar)], **meta)
    b = sol.buckets[0]
    _say(f"R*={sol.R:.4f} J={sol.J:.5f} A={sol.A:.6f} spread={2 * (b.delta_bar + sol.A * params.buckets[0].size):.4f} "
         f"rejection={b.reject_prob:.4f}")
    return EXIT_OK


def _run_simulation(args, params, grid):
    params, policy = experiments.simulation_policy(params, grid, args.engine)
    R0 = args.R0 if args.R0 is not None else 0.0
    cfg = simulator.SimConfig(params, policy, n_paths=args.paths, horizon=args.sim_horizon,
                              seed=args.seed, R0=R0)
    return params, simulator.simulate(cfg)


def cmd_simulate(args) -> int:
    params, grid, _ = load_manifest(args, "simulation_fair")
    params, res = _run_simulation(args, params, grid)
    out = Path(args.out)
    meta = dict(params=params, grid=grid, seed=args.seed, command="simulate")
    rej = res.realized_reject_rate
    rows = [(i, res.utility[i], rej[i], int(res.requests[i].sum()), int(res.accepts[i].sum()),
             int(res.capped[i].sum()), int(res.terminal_q[i]), res.terminal_R[i]) for i in range(res.n_paths)]
    write_csv(out / "paths.csv", ("path_id", "utility", "realized_reject_rate", "requests", "accepts",
                                  "capped", "terminal_q", "terminal_R"), rows, **meta)
    write_csv(out / "reputation_relaxation.csv", ("t", "mean_R", "sd_R"), experiments.relaxation_rows(res), **meta)
    bins = min(args.bins, res.n_paths)
    stats = simulator.ensemble_stats(res, bins)
    write_csv(out / "utility_vs_rejection.csv", ("bin_rejection_rate", "mean_utility", "stderr"),
              [(b.bin_rejection_rate, b.mean_utility, b.stderr) for b in stats], **meta)
    u, se = res.mean_se(res.utility)
    _say(f"paths={res.n_paths} utility={u:.3f}+/-{se:.3f} mean_terminal_R={res.terminal_R.mean():.5f}")
    return EXIT_OK


def cmd_table1(args) -> int:
    params, grid, _ = load_manifest(args, "table1_tau1s")
    rows = experiments.table1(grid, params, progress=lambda r: _say(
        f"{r.model:<24} rho_g={r.rho_g:.2f} spread={r.spread_bp:.3f} threshold={r.threshold_bp:.3f} "
        f"rejection={r.rejection:.3f} utility={r.utility:.2f}"))
    out = Path(args.out)
    meta = dict(params=params, grid=grid, seed=args.seed, command="table1")
    write_csv(out / "table1.csv", ("model", "rho_g", "spread_bp", "threshold_bp", "rejection", "utility"),
              [(r.model, r.rho_g, r.spread_bp, r.threshold_bp, r.rejection, r.utility) for r in rows], **meta)
    cells = experiments.table1_diff(rows)
    write_csv(out / "table1_diff.csv", ("model", "rho_g", "column", "ours", "reference", "tolerance", "ok"),
              [(c.model, c.rho_g, c.column, c.ours, c.reference, c.tolerance, c.ok) for c in cells], **meta)
    bad = [c for c in cells if not c.ok]
    _say(f"diff: {len(cells) - len(bad)}/{len(cells)} cells within tolerance; "
         f"utility ordering {'holds' if experiments.utility_ordering_holds(rows) else 'FAILS'}")
    for c in bad:
        _say(f"  OUTSIDE {c.model} rho_g={c.rho_g:.2f} {c.column}: ours {c.ours:.4f} vs {c.reference:.4f} "
             f"(tol {c.tolerance})")
    return EXIT_VALIDATION if (bad and args.strict) else EXIT_OK


def _figure(name, args, params, grid):
    """(header, rows) for one figure."""
    if name == "latency_sweep":
        pts = experiments.latency_sweep(grid=grid, base=params)
        return (("tau_s", "spread_bp", "reject_prob", "threshold_bp", "spread_toxic_no_reject",
                 "spread_clean_no_reject"),
                [(p.tau_s, p.spread_bp, p.reject_prob, p.threshold_bp, p.spread_toxic_no_reject,
                  p.spread_clean_no_reject) for p in pts])
    if name == "thresholds_vs_q":
        return ("q", "bid_threshold_bp", "ask_threshold_bp"), experiments.thresholds_vs_q(params, grid)
    if name == "policy_vs_R":
        return (("R", "spread_bp", "threshold_bp", "rejection", "rejection_weighted", "J"),
                experiments.policy_vs_R(params, grid))
    if name == "stationary_vs_rhog":
        pts = experiments.stationary_vs_rhog(base=params, grid=grid)
        return (("rho_g", "engine", "R_star", "spread_bp", "threshold_bp", "rejection"),
                [(p.rho_g, p.engine, p.R_star, p.spread_bp, p.threshold_bp, p.rejection) for p in pts])
    if name == "quotes_vs_q":
        R, rows = experiments.quotes_vs_q(params, grid)
        return ("q", "exact_bid", "exact_ask", "adiabatic_bid", "adiabatic_ask"), rows
    if name == "value_surface":
        return ("q", "R", "V"), experiments.value_surface(params, grid)
    if name in ("sim_relaxation", "sim_utility"):
        _, res = _run_simulation(args, params, grid)
        if name == "sim_relaxation":
            return ("t", "mean_R", "sd_R"), experiments.relaxation_rows(res)
        stats = simulator.ensemble_stats(res, min(args.bins, res.n_paths))
        return (("bin_rejection_rate", "mean_utility", "stderr"),
                [(b.bin_rejection_rate, b.mean_utility, b.stderr) for b in stats])
    raise UnknownFigure(name)


def cmd_figures(args) -> int:
    names = FIGURES if args.figure == "all" else (args.figure,)
    for name in names:
        if name not in FIGURES:
            raise UnknownFigure(name)
    for name in names:
        params, grid, _ = load_manifest(args, _FIGURE_PRESET[name])
        header, rows = _figure(name, args, params, grid)
        path = write_csv(Path(args.out) / f"{name}.csv", header, rows, params, grid, args.seed,
                         f"figures {name}")
        _say(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    grid = None
    if args.config or args.preset:
        _, grid, _ = load_manifest(args)
    results = validation.run(seed=args.seed, grid=grid, mutate=args.mutate, quick=args.quick)
    width = max(len(r.name) for r in results)
    for r in results:
        _say(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  ({r.seconds:.1f}s)")
    failed = sum(not r.passed for r in results)
    _say(f"{len(results) - failed}/{len(results)} checks passed")
    if args.out:
        write_csv(Path(args.out) / "validate.csv", ("check", "passed", "detail"),
                  [(r.name, r.passed, r.detail) for r in results], seed=args.seed, command="validate")
    return EXIT_VALIDATION if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--preset", help=f"one of: {', '.join(PRESET_NAMES)}")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker cap (engines here are serial)")
    common.add_argument("--engine", choices=("hjb", "adiabatic"), default="hjb")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    common.add_argument("--protocol", choices=[p.value for p in Protocol], help="shortcut for --set protocol=")
    common.add_argument("--rho_g", help="shortcut for --set rho_g=")
    common.add_argument("--theta", help="shortcut for --set theta=")
    common.add_argument("--tau", help="shortcut for --set tau_seconds=")
    common.add_argument("--horizon", help="shortcut for --set horizon_days=")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=int, default=50_000)
    sim.add_argument("--sim-horizon", dest="sim_horizon", type=float, default=None,
                     help="simulated days (default: config horizon)")
    sim.add_argument("--R0", type=float, default=None, help="initial rejection score")
    sim.add_argument("--bins", type=int, default=50)

    p = argparse.ArgumentParser(prog="lastlook", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"lastlook {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="exact grid solve")
    s.add_argument("--stationary", action="store_true", help="integrate until controls settle")
    s.set_defaults(func=cmd_solve)
    sub.add_parser("approx", parents=[common], help="adiabatic approximation").set_defaults(func=cmd_approx)
    sub.add_parser("simulate", parents=[common, sim], help="Monte Carlo simulation").set_defaults(func=cmd_simulate)
    t = sub.add_parser("table1", parents=[common], help="protocol comparison table")
    t.add_argument("--strict", action="store_true", help="exit 3 if any cell is outside tolerance")
    t.set_defaults(func=cmd_table1)
    f = sub.add_parser("figures", parents=[common, sim], help="figure data as CSV")
    f.add_argument("figure", help=f"one of: {', '.join(FIGURES)}, all")
    f.set_defaults(func=cmd_figures)
    v = sub.add_parser("validate", parents=[common], help="property and cross-engine checks")
    v.add_argument("--mutate", choices=validation.MUTATIONS, default=None,
                   help="install a broken kernel to confirm the checks catch it")
    v.add_argument("--quick", action="store_true", help="skip grid-solver checks")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        import numba
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, LastLookError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
