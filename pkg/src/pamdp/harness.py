"""Experiment orchestration: scenarios, replicates and artifact emission."""
from __future__ import annotations

import copy
import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence

import jsonschema
import numpy as np

from .agents import OracleAgent, QLearningAgent, QLearningConfig
from .envs import LineWorldConfig, build_lineworld, build_subsidy_policy, chain_mdp, random_mdp
from .exceptions import ConfigError, EmissionError
from .ledger import (EpisodeRecord, PowerLawFit, RegretLedger, fit_power_law,
                     fit_regret_exponent)
from .mdp import EpisodeSampler, FiniteMDP, optimal_welfare
from .mechanism import (Phase1Config, Phase2Config, implementability_check, minimal_transfers,
                        phase1_estimate, records_from_episodes, two_phase_run)

__all__ = [
    "CONFIG_SCHEMA", "CSV_HEADER", "EpisodeRecord", "ExperimentResult", "RegretLedger",
    "SweepResult", "emit_csv", "emit_svg", "estimate_transfers", "fit_regret_exponent",
    "load_config", "read_csv", "regret_sweep", "rolling_average", "run_experiment",
    "validate_config",
]

SCENARIOS = ("baseline", "subsidy", "two_phase")
PHASE_OF = {"baseline": "Baseline", "subsidy": "Subsidy"}
CSV_HEADER = ["episode", "phase", "agent_return", "principal_return", "welfare",
              "terminal_pollution", "seed"]
DEFAULT_WINDOW = 200

_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["env", "scenario"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "env": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["lineworld", "random", "chain", "file"]},
                "num_positions": _pos_int, "horizon": _pos_int, "pollution_cap": _pos_int,
                "effects": {"type": "array", "minItems": 3, "maxItems": 3,
                            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                      "items": {"type": "integer"}}},
                "agent_rewards": {"type": "array", "minItems": 3, "maxItems": 3, "items": _number},
                "goal_reward": _number, "subsidy": {"type": "number", "minimum": 0},
                "S": _pos_int, "K": _pos_int, "H": _pos_int, "seed": {"type": "integer"},
                "sparsity": {"type": "number", "minimum": 0, "maximum": 1},
                "r_p": {"type": "number", "minimum": 0, "maximum": 1},
                "path": {"type": "string"},
            },
        },
        "agent": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["qlearning", "oracle"]},
                "learning_rate": _number, "lr_schedule": {"enum": ["constant", "inverse_count"]},
                "epsilon": _number, "epsilon_decay": _number, "epsilon_min": _number,
                "epsilon_schedule": {"enum": ["exponential", "power"]},
                "epsilon_power": _number, "q_init": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "scenario": {"oneOf": [{"enum": list(SCENARIOS)},
                               {"type": "array", "minItems": 1, "items": {"enum": list(SCENARIOS)}}]},
        "phase1": {
            "type": "object", "additionalProperties": False,
            "properties": {"alpha": _number, "beta": _number, "theta": _number,
                           "width": _number, "stationary": {"type": "boolean"},
                           "kappa": {"type": ["number", "null"]}},
        },
        "phase2": {
            "type": "object", "additionalProperties": False,
            "properties": {"bonus_scale": _number, "delta": _number,
                           "known_model": {"type": "boolean"},
                           "offer_scope": {"enum": ["path", "all"]}},
        },
        "episodes": _pos_int,
        "replicates": _pos_int,
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "out_dir": {"type": "string"},
        "rolling_window": _pos_int,
        "workers": _pos_int,
        "t_grid": {"type": "array", "minItems": 2, "items": _pos_int},
    },
}


def validate_config(config: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA` and fill defaults."""
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = copy.deepcopy(config)
    cfg.setdefault("agent", {"kind": "qlearning"})
    cfg.setdefault("episodes", 5000)
    if isinstance(cfg["scenario"], str):
        cfg["scenario"] = [cfg["scenario"]]
    if "seeds" in cfg:
        if "replicates" in cfg and cfg["replicates"] != len(cfg["seeds"]):
            raise ConfigError("config error at seeds: length must equal replicates")
        cfg["replicates"] = len(cfg["seeds"])
    else:
        cfg["seeds"] = list(range(1, cfg.get("replicates", 1) + 1))
        cfg["replicates"] = len(cfg["seeds"])
    cfg.setdefault("rolling_window", DEFAULT_WINDOW)
    cfg.setdefault("workers", 1)
    cfg.setdefault("phase1", {})
    cfg.setdefault("phase2", {})
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return validate_config(doc)


def build_env(env_cfg: dict):
    """Return ``(mdp, terminal_fn, lineworld_cfg_or_None)``."""
    kind = env_cfg["kind"]
    opts = {k: v for k, v in env_cfg.items() if k != "kind"}
    if kind == "lineworld":
        names = {f.name for f in fields(LineWorldConfig)}
        unknown = set(opts) - names
        if unknown:
            raise ConfigError(f"config error at env: unknown line-world fields {sorted(unknown)}")
        lw = LineWorldConfig(**opts)
        return build_lineworld(lw), lw.pollution_of, lw
    if kind == "random":
        try:
            mdp = random_mdp(opts["S"], opts["K"], opts["H"], opts.get("seed", 0), opts.get("sparsity", 0.0))
        except KeyError as exc:
            raise ConfigError(f"config error at env: random env needs {exc.args[0]}") from None
        return mdp, None, None
    if kind == "chain":
        return chain_mdp(opts.get("r_p", 0.0)), None, None
    try:
        with open(opts["path"]) as fh:
            return FiniteMDP.from_json(fh.read()), None, None
    except KeyError:
        raise ConfigError("config error at env: file env needs a path") from None
    except OSError as exc:
        raise ConfigError(f"config error at env/path: cannot read {exc.filename}") from None


def build_agent(agent_cfg: dict, mdp: FiniteMDP, seed):
    if agent_cfg["kind"] == "oracle":
        return OracleAgent(mdp)
    opts = {k: v for k, v in agent_cfg.items() if k != "kind"}
    return QLearningAgent(QLearningConfig(**opts), mdp.S, mdp.K, mdp.H, seed)


def _seeds(seed):
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    return env_ss, agent_ss


def run_replicate(cfg: dict, scenario: str, seed: int, episodes: Optional[int] = None) -> RegretLedger:
    """One seeded run of ``scenario``; fully determined by ``(cfg, seed)``."""
    mdp, terminal_fn, lw = build_env(cfg["env"])
    env_ss, agent_ss = _seeds(seed)
    sampler = EpisodeSampler(mdp, env_ss)
    agent = build_agent(cfg["agent"], mdp, agent_ss)
    n = cfg["episodes"] if episodes is None else episodes
    if scenario == "two_phase":
        return two_phase_run(sampler, agent, Phase1Config(**cfg["phase1"]), Phase2Config(**cfg["phase2"]),
                             n, seed=seed, terminal_fn=terminal_fn)
    contract = None
    if scenario == "subsidy":
        if lw is None:
            raise ConfigError("config error at scenario: the subsidy scenario needs a lineworld env")
        contract = build_subsidy_policy(lw)
    episodes_ = [sampler.run(agent, contract=contract) for _ in range(n)]
    W_star, _ = optimal_welfare(mdp)
    records = records_from_episodes(episodes_, PHASE_OF[scenario], 0, seed, terminal_fn)
    return RegretLedger(records, W_star, seed=seed, meta={"scenario": scenario})


@dataclass
class ExperimentResult:
    """Ledgers per scenario, each list ordered like the configured seeds."""

    config: dict
    ledgers: dict

    def __getitem__(self, scenario) -> list:
        return self.ledgers[scenario]

    def mean_series(self, scenario: str, which: str = "welfare") -> np.ndarray:
        return np.mean([_series(l, which) for l in self.ledgers[scenario]], axis=0)

    def tail_mean(self, scenario: str, which: str = "welfare", last: int = 500) -> float:
        return float(np.mean([_series(l, which)[-last:] for l in self.ledgers[scenario]]))


def _series(ledger: RegretLedger, which: str) -> np.ndarray:
    if which == "welfare":
        return ledger.welfare
    if which == "pollution":
        return ledger.terminal_pollution
    if which == "regret":
        return ledger.regret
    raise ConfigError(f"unknown series {which!r}")


def _run_many(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [run_replicate(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_replicate, *zip(*jobs)))


def run_experiment(config: dict) -> ExperimentResult:
    """Run every configured scenario for every seed.

    Replicates may run in worker processes (``workers``); results are always
    collected in seed order, so output is independent of scheduling.
    """
    cfg = validate_config(config)
    jobs = [(cfg, sc, seed) for sc in cfg["scenario"] for seed in cfg["seeds"]]
    ledgers = _run_many(jobs, cfg["workers"])
    out, i = {}, 0
    for sc in cfg["scenario"]:
        out[sc] = ledgers[i:i + len(cfg["seeds"])]
        i += len(cfg["seeds"])
    return ExperimentResult(cfg, out)


def rolling_average(series: Sequence[float], window: int = DEFAULT_WINDOW) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x
    head = np.cumsum(x[:window - 1]) / np.arange(1, min(window, x.size + 1))
    if x.size < window:
        return head
    full = np.lib.stride_tricks.sliding_window_view(x, window).mean(axis=1)
    return np.concatenate((head, full))


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def emit_csv(ledgers, path) -> None:
    """Write records of one ledger or a list of ledgers with :data:`CSV_HEADER`."""
    if isinstance(ledgers, RegretLedger):
        ledgers = [ledgers]
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for ledger in ledgers:
                for r in ledger.records:
                    writer.writerow([r.episode, r.phase, _fmt(r.agent_return), _fmt(r.principal_return),
                                     _fmt(r.welfare), _fmt(r.terminal_pollution),
                                     "" if r.seed is None else r.seed])
    except OSError as exc:
        raise EmissionError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return [EpisodeRecord(
            episode=int(row["episode"]), phase=row["phase"],
            agent_return=float(row["agent_return"]), principal_return=float(row["principal_return"]),
            welfare=float(row["welfare"]),
            terminal_pollution=float(row["terminal_pollution"]) if row["terminal_pollution"] else None,
            seed=int(row["seed"]) if row["seed"] else None) for row in reader]


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
_TITLES = {"welfare": "Rolling average social welfare",
           "pollution": "Rolling average terminal pollution",
           "regret": "Cumulative social-welfare regret"}


def emit_svg(series_by_name: Mapping[str, object], path, which: str = "welfare",
             window: int = DEFAULT_WINDOW, width: int = 640, height: int = 400) -> None:
    """Static SVG line chart, one polyline per entry of ``series_by_name``.

    Values may be a ledger, a list of ledgers (averaged per episode) or a
    raw numeric series. Welfare and pollution are smoothed with
    :func:`rolling_average`; regret is plotted as is.
    """
    curves = {}
    for name, val in series_by_name.items():
        if isinstance(val, RegretLedger):
            y = _series(val, which)
        elif isinstance(val, (list, tuple)) and val and isinstance(val[0], RegretLedger):
            y = np.mean([_series(l, which) for l in val], axis=0)
        else:
            y = np.asarray(val, dtype=float)
        if which != "regret":
            y = rolling_average(y, window)
        curves[name] = y
    left, right, top, bottom = 60, 20, 30, 40
    pw, ph = width - left - right, height - top - bottom
    finite = [v for y in curves.values() for v in y if np.isfinite(v)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    n_max = max((len(y) for y in curves.values()), default=1)

    def px(i, v):
        x = left + pw * (i / max(n_max - 1, 1))
        y = top + ph * (1 - (v - lo) / (hi - lo))
        return f"{x:.2f},{y:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{_TITLES.get(which, which)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{left - 5}" y="{top + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{hi:.3g}</text>',
        f'<text x="{left - 5}" y="{top + ph}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{lo:.3g}</text>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="11">episode (n = {n_max})</text>',
    ]
    for j, (name, y) in enumerate(curves.items()):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(px(i, v) for i, v in enumerate(y) if np.isfinite(v))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{left + 10}" y="{top + 16 + 14 * j}" font-family="sans-serif" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise EmissionError(f"cannot write {path}: {exc.strerror}") from exc


@dataclass
class SweepResult:
    t_grid: list
    seeds: list
    regret: np.ndarray
    ledgers: list
    fit: PowerLawFit

    @property
    def mean_regret(self) -> np.ndarray:
        return self.regret.mean(axis=1)


def regret_sweep(config: dict, t_grid: Sequence[int]) -> SweepResult:
    """Independent two-phase runs at each horizon T; fit R_sw(T) ~ T^exponent.

    ``regret[i, j]`` is R_sw for ``t_grid[i]`` and seed ``j``. The fit uses
    the per-T mean over seeds.
    """
    cfg = validate_config(config)
    jobs = [(cfg, "two_phase", seed, T) for T in t_grid for seed in cfg["seeds"]]
    ledgers = _run_many(jobs, cfg["workers"])
    n_seeds = len(cfg["seeds"])
    regret = np.array([l.R_sw() for l in ledgers]).reshape(len(t_grid), n_seeds)
    fit = fit_power_law(t_grid, regret.mean(axis=1))
    grouped = [ledgers[i * n_seeds:(i + 1) * n_seeds] for i in range(len(t_grid))]
    return SweepResult(list(t_grid), list(cfg["seeds"]), regret, grouped, fit)


def estimate_transfers(config: dict, seed: Optional[int] = None) -> dict:
    """Run Phase 1 alone and compare the estimate with the true minimal transfers."""
    cfg = validate_config(config)
    seed = cfg["seeds"][0] if seed is None else seed
    mdp, _, _ = build_env(cfg["env"])
    env_ss, agent_ss = _seeds(seed)
    p1cfg = Phase1Config(**{**cfg["phase1"], "T": cfg["episodes"]})
    result = phase1_estimate(EpisodeSampler(mdp, env_ss), build_agent(cfg["agent"], mdp, agent_ss), p1cfg)
    tau_star = minimal_transfers(mdp).tau_star
    ok = implementability_check(mdp, result.tau_hat)
    err = result.tau_hat - tau_star
    est = result.estimated
    return {
        "result": result,
        "tau": {"tau": result.tau_hat.tolist()},
        "report": {
            "seed": seed,
            "episodes_used": result.episodes_used,
            "batches": result.n_batches,
            "batch_length": result.batch_length,
            "partial": result.partial,
            "implementable": ok.tolist(),
            "all_implementable": bool(ok.all()),
            "starved_targets": [list(map(int, idx)) for idx in zip(*np.nonzero(result.starved))],
            "max_abs_error": float(np.abs(err[est]).max()) if est.any() else None,
            "min_error": float(err[est].min()) if est.any() else None,
        },
    }
