"""Per-episode records, social-welfare regret and power-law fits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError

PHASES = ("Phase1", "Phase2", "Baseline", "Subsidy")


@dataclass
class EpisodeRecord:
    episode: int
    phase: str
    agent_return: float
    principal_return: float
    welfare: float
    terminal_pollution: Optional[float] = None
    seed: Optional[int] = None
    deviated: bool = False


@dataclass
class PowerLawFit:
    """Least-squares fit of ``log y = exponent * log t + intercept``."""

    exponent: float
    intercept: float
    stderr: float
    excluded: list = field(default_factory=list)

    @property
    def band(self):
        """Approximate 95% band on the exponent."""
        return (self.exponent - 1.96 * self.stderr, self.exponent + 1.96 * self.stderr)

    def __iter__(self):
        yield self.exponent
        yield self.intercept


def fit_power_law(ts: Sequence[float], values: Sequence[float]) -> PowerLawFit:
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    excluded = [float(t) for t in ts[~keep]]
    if keep.sum() < 2:
        raise ConfigError(f"need at least 2 grid points with positive regret, got {int(keep.sum())}")
    x, y = np.log(ts[keep]), np.log(values[keep])
    slope, intercept = np.polyfit(x, y, 1)
    stderr = 0.0
    if len(x) > 2:
        resid = y - (slope * x + intercept)
        sxx = ((x - x.mean()) ** 2).sum()
        stderr = float(np.sqrt((resid ** 2).sum() / (len(x) - 2) / sxx))
    return PowerLawFit(float(slope), float(intercept), stderr, excluded)


class RegretLedger:
    """Episode records plus the social-welfare regret they imply.

    ``regret[T - 1]`` is ``T * W_star - sum_{k <= T} W_k``.
    """

    def __init__(self, records: Sequence[EpisodeRecord], W_star: float, seed=None, meta=None):
        self.records = list(records)
        self.W_star = float(W_star)
        self.seed = seed
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.records)

    @property
    def welfare(self) -> np.ndarray:
        return np.array([r.welfare for r in self.records], dtype=float)

    @property
    def terminal_pollution(self) -> np.ndarray:
        return np.array([np.nan if r.terminal_pollution is None else r.terminal_pollution
                         for r in self.records], dtype=float)

    @property
    def regret(self) -> np.ndarray:
        return np.cumsum(self.W_star - self.welfare)

    def R_sw(self, T: Optional[int] = None) -> float:
        if not self.records:
            return 0.0
        T = len(self.records) if T is None else T
        return float(self.regret[T - 1])

    def decomposition(self) -> dict:
        """Split R_sw into Phase-1, Phase-2 learning and agent-deviation parts."""
        parts = {"phase1": 0.0, "phase2": 0.0, "deviation": 0.0, "other": 0.0}
        for r in self.records:
            gap = self.W_star - r.welfare
            if r.phase == "Phase1":
                parts["phase1"] += gap
            elif r.phase == "Phase2":
                parts["deviation" if r.deviated else "phase2"] += gap
            else:
                parts["other"] += gap
        return parts

    def fit(self, t_grid: Optional[Sequence[int]] = None) -> PowerLawFit:
        return fit_regret_exponent(self, t_grid)


def default_grid(n: int) -> list:
    grid = [2 ** k for k in range(4, 64) if 2 ** k <= n]
    return grid if len(grid) >= 2 else [max(1, n // 2), n]


def fit_regret_exponent(ledger: RegretLedger, t_grid: Optional[Sequence[int]] = None) -> PowerLawFit:
    """Slope of log R_sw(T) against log T over ``t_grid``.

    Grid points where R_sw(T) <= 0 are dropped and listed in ``excluded``.
    """
    t_grid = default_grid(len(ledger)) if t_grid is None else list(t_grid)
    if max(t_grid) > len(ledger):
        raise ConfigError(f"ledger has {len(ledger)} episodes, grid needs {max(t_grid)}")
    regret = ledger.regret
    return fit_power_law(t_grid, [regret[t - 1] for t in t_grid])
