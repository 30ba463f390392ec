"""Command-line entry point.

Exit status: 0 success, 2 configuration error, 3 infeasible episode budget,
4 file-system error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import aggregation
from .exceptions import BudgetError, ConfigError, EmissionError
from .harness import (emit_csv, emit_svg, estimate_transfers, load_config, regret_sweep,
                      run_experiment)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_IO = 0, 2, 3, 4
DEFAULT_T_GRID = [2 ** k for k in range(10, 17)]


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
        cfg["replicates"] = 1
    if args.episodes is not None:
        cfg["episodes"] = args.episodes
    cfg["out_dir"] = args.out or cfg.get("out_dir") or "out"
    return cfg


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise EmissionError(f"cannot create output directory {path}: {exc.strerror}") from exc


def _write_json(path, doc):
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise EmissionError(f"cannot write {path}: {exc.strerror}") from exc


def cmd_run(args, say):
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_experiment(cfg)
    out = cfg["out_dir"]
    _makedirs(out)
    for scenario, ledgers in result.ledgers.items():
        path = os.path.join(out, f"{scenario}.csv")
        emit_csv(ledgers, path)
        last = min(500, cfg["episodes"])
        pollution = result.tail_mean(scenario, "pollution", last)
        say(f"{scenario}: mean welfare (last {last}) = {result.tail_mean(scenario, 'welfare', last):.4f}"
            + ("" if np.isnan(pollution) else f", mean terminal pollution = {pollution:.4f}")
            + f", R_sw(T) = {np.mean([l.R_sw() for l in ledgers]):.2f} -> {path}")
    if args.plot:
        which = ["welfare", "regret"]
        if cfg["env"]["kind"] == "lineworld":
            which.insert(1, "pollution")
        for w in which:
            path = os.path.join(out, f"{w}.svg")
            emit_svg(result.ledgers, path, w, cfg["rolling_window"])
            say(f"wrote {path}")
    return EXIT_OK


def cmd_estimate(args, say):
    cfg = _apply_overrides(load_config(args.config), args)
    out = cfg["out_dir"]
    _makedirs(out)
    est = estimate_transfers(cfg)
    _write_json(os.path.join(out, "tau_hat.json"), est["tau"])
    _write_json(os.path.join(out, "implementability.json"), est["report"])
    rep = est["report"]
    say(f"Phase 1 used {rep['episodes_used']} episodes ({rep['batches']} batches of {rep['batch_length']}); "
        f"all implementable: {rep['all_implementable']}; starved targets: {len(rep['starved_targets'])}")
    return EXIT_OK


def cmd_sweep(args, say):
    cfg = _apply_overrides(load_config(args.config), args)
    if args.t_grid:
        grid = [int(x) for x in args.t_grid.split(",")]
    else:
        grid = cfg.get("t_grid", DEFAULT_T_GRID)
    out = cfg["out_dir"]
    _makedirs(out)
    sweep = regret_sweep(cfg, grid)
    path = os.path.join(out, "regret_sweep.csv")
    try:
        with open(path, "w") as fh:
            fh.write("T,seed,R_sw,phase1,phase2,deviation\n")
            for T, group in zip(sweep.t_grid, sweep.ledgers):
                for ledger in group:
                    d = ledger.decomposition()
                    fh.write(f"{T},{ledger.seed},{ledger.R_sw()!r},{d['phase1']!r},"
                             f"{d['phase2']!r},{d['deviation']!r}\n")
    except OSError as exc:
        raise EmissionError(f"cannot write {path}: {exc.strerror}") from exc
    fit = sweep.fit
    _write_json(os.path.join(out, "regret_fit.json"),
                {"t_grid": sweep.t_grid, "mean_regret": sweep.mean_regret.tolist(),
                 "exponent": fit.exponent, "intercept": fit.intercept, "stderr": fit.stderr,
                 "band": list(fit.band), "excluded": fit.excluded})
    say(f"fitted regret exponent {fit.exponent:.3f} (+/- {1.96 * fit.stderr:.3f}) -> {path}")
    return EXIT_OK


def cmd_diffusion(args, say):
    if args.alpha is not None or args.sigma is not None:
        if args.alpha is None or args.sigma is None:
            raise ConfigError("--alpha and --sigma must be given together")
        spec = aggregation.GaussianDiffusionSpec.with_point(
            args.alpha, args.sigma, 0.5, args.mu0, args.sigma0_sq, args.dim)
        times = [0.5]
    else:
        spec = aggregation.GaussianDiffusionSpec.cosine(args.points, args.mu0, args.sigma0_sq, args.dim)
        times = spec.times
    reports = [aggregation.diffusion_report(spec, t, args.n, args.seed) for t in times]
    doc = reports[0] if len(reports) == 1 else reports
    text = json.dumps(doc, indent=2)
    if args.out:
        _makedirs(args.out)
        path = os.path.join(args.out, "diffusion_check.json")
        _write_json(path, doc)
        say(f"wrote {path}")
    else:
        print(text)
    return EXIT_OK if all(r["passed"] for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pamdp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seeds with one seed")
        p.add_argument("--episodes", type=int, help="override the episode count")
        p.add_argument("--out", help="output directory")
        p.add_argument("--plot", action="store_true", help="also emit SVG charts")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="run baseline / subsidy / two-phase scenarios"))
    common(sub.add_parser("estimate-transfers", help="Phase-1 transfer estimation only"))
    p = sub.add_parser("regret-sweep", help="two-phase runs over a grid of horizons T")
    common(p)
    p.add_argument("--t-grid", help="comma-separated episode budgets, e.g. 1024,2048,4096")
    p = sub.add_parser("diffusion-check", help="Gaussian denoiser / planner checks")
    common(p, config_required=False)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0-sq", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--points", type=int, default=5, help="cosine schedule points")
    p.add_argument("--alpha", type=float, help="single schedule point alpha_t")
    p.add_argument("--sigma", type=float, help="single schedule point sigma_t")
    p.add_argument("--n", type=int, default=100_000, help="Monte Carlo samples")
    return parser


COMMANDS = {"run": cmd_run, "estimate-transfers": cmd_estimate,
            "regret-sweep": cmd_sweep, "diffusion-check": cmd_diffusion}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = (lambda *_: None) if args.quiet else (lambda msg: print(msg))
    try:
        return COMMANDS[args.command](args, say)
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EmissionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
