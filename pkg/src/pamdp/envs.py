"""Concrete environments: the pollution line-world, a two-state chain and
random MDPs for property tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .mdp import FiniteMDP, TransferPolicy

FAST, SLOW, DETOUR = 0, 1, 2
ACTION_NAMES = ("fast", "slow", "detour")


@dataclass(frozen=True)
class LineWorldConfig:
    """Line-world with pollution as a state variable.

    Actions are (fast, slow, detour) with position and pollution increments
    given by ``effects``. The last position is the goal: position stays put
    there and every action pays the agent ``goal_reward``, but actions keep
    changing pollution. The principal earns ``1 - pollution / cap`` per step;
    on the final step that term is averaged with the same expression
    evaluated on the post-action pollution, which is the terminal pollution
    of the episode.
    """

    num_positions: int = 8
    horizon: int = 12
    pollution_cap: int = 20
    effects: tuple = ((2, 2), (1, 1), (1, -2))
    agent_rewards: tuple = (0.9, 0.6, 0.3)
    goal_reward: float = 1.0
    subsidy: float = 0.65
    max_table_size: int = 10_000_000

    def __post_init__(self):
        if self.num_positions < 2 or self.horizon < 1 or self.pollution_cap < 1:
            raise ConfigError("line-world needs >= 2 positions, horizon >= 1 and cap >= 1")
        if len(self.effects) != 3 or len(self.agent_rewards) != 3:
            raise ConfigError("line-world has exactly three actions")
        object.__setattr__(self, "effects", tuple(tuple(int(x) for x in e) for e in self.effects))
        object.__setattr__(self, "agent_rewards", tuple(float(x) for x in self.agent_rewards))
        if not all(0 <= r <= 1 for r in self.agent_rewards + (self.goal_reward,)):
            raise ConfigError("line-world agent rewards must lie in [0, 1]")
        if self.subsidy < 0:
            raise ConfigError("subsidy must be nonnegative")

    @property
    def num_states(self) -> int:
        return self.num_positions * (self.pollution_cap + 1)

    @property
    def goal(self) -> int:
        return self.num_positions - 1

    def encode(self, position: int, pollution: int) -> int:
        return position * (self.pollution_cap + 1) + pollution

    def decode(self, state: int):
        return divmod(int(state), self.pollution_cap + 1)

    def pollution_of(self, state: int) -> int:
        return self.decode(state)[1]

    def step(self, position: int, pollution: int, action: int):
        dpos, dpol = self.effects[action]
        if position != self.goal:
            position = min(position + dpos, self.goal)
        pollution = min(max(pollution + dpol, 0), self.pollution_cap)
        return position, pollution


def build_lineworld(cfg: LineWorldConfig = LineWorldConfig()) -> FiniteMDP:
    S, K, H = cfg.num_states, 3, cfg.horizon
    if S * K * H > cfg.max_table_size:
        raise ConfigError(f"line-world table size {S * K * H} exceeds cap {cfg.max_table_size}")
    cap = float(cfg.pollution_cap)
    P = np.zeros((S, K, S))
    r_a = np.zeros((S, K))
    r_p = np.zeros((H, S, K))
    for pos in range(cfg.num_positions):
        for pol in range(cfg.pollution_cap + 1):
            s = cfg.encode(pos, pol)
            for a in range(K):
                npos, npol = cfg.step(pos, pol, a)
                P[s, a, cfg.encode(npos, npol)] = 1.0
                r_a[s, a] = cfg.goal_reward if pos == cfg.goal else cfg.agent_rewards[a]
                r_p[:, s, a] = 1.0 - pol / cap
                r_p[H - 1, s, a] = 0.5 * (1.0 - pol / cap) + 0.5 * (1.0 - npol / cap)
    rho = np.zeros(S)
    rho[cfg.encode(0, 0)] = 1.0
    return FiniteMDP(P, r_a, r_p, H, rho)


def build_subsidy_policy(cfg: LineWorldConfig = LineWorldConfig()) -> TransferPolicy:
    """Flat payment ``cfg.subsidy`` on detour in every state and step."""
    table = np.zeros((cfg.num_states, 3))
    table[:, DETOUR] = cfg.subsidy
    return TransferPolicy.stationary(table, cfg.horizon)


def chain_mdp(r_p: float = 0.0) -> FiniteMDP:
    """Two-state deterministic chain with H = 2, starting in s0.

    In s0, action 0 pays 0.1 and stays, action 1 pays 0 and moves to s1.
    In s1, action 0 pays 1.0 and action 1 pays 0.2; both stay.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 1] = 1.0
    r_a = np.array([[0.1, 0.0], [1.0, 0.2]])
    r_p_table = np.broadcast_to(np.asarray(r_p, dtype=float), (2, 2))
    return FiniteMDP(P, r_a, r_p_table, 2, [1.0, 0.0])


def random_mdp(S: int, K: int, H: int, seed=None, sparsity: float = 0.0) -> FiniteMDP:
    """Random MDP with Dirichlet transition rows and uniform rewards.

    ``sparsity`` in [0, 1] is the fraction of next states zeroed out in each
    row; ``sparsity=1`` leaves one successor per (s, a).
    """
    if min(S, K, H) < 1:
        raise ConfigError("S, K and H must be at least 1")
    if not 0.0 <= sparsity <= 1.0:
        raise ConfigError("sparsity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    support = max(1, int(round((1.0 - sparsity) * S)))
    P = np.zeros((S, K, S))
    for s in range(S):
        for a in range(K):
            succ = rng.choice(S, size=support, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(support))
    P /= P.sum(axis=2, keepdims=True)
    r_a = rng.random((S, K))
    r_p = rng.random((S, K))
    rho = rng.dirichlet(np.ones(S))
    return FiniteMDP(P, r_a, r_p, H, rho)
