"""Agent behaviour models and hindsight-rationality measurement."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import ConfigError
from .mdp import EpisodeSampler, FiniteMDP, TransferPolicy, policy_evaluation, value_iteration


class AgentLearner:
    """Behavioural contract for agents.

    The simulator calls :meth:`start_episode`, then alternates :meth:`act`
    and :meth:`observe` for every step, and finishes with :meth:`end_episode`.
    ``offered`` is the transfer vector over actions proposed at the current
    step; ``reward`` passed to :meth:`observe` already includes the transfer.
    """

    num_actions: int

    def start_episode(self, contract: Optional[TransferPolicy] = None) -> None:
        pass

    def act(self, h: int, s: int, offered: np.ndarray) -> int:
        raise NotImplementedError

    def action_probs(self, h: int, s: int, offered: np.ndarray) -> np.ndarray:
        """Distribution :meth:`act` would sample from right now."""
        raise NotImplementedError

    def observe(self, h: int, s: int, a: int, reward: float, s_next: int) -> None:
        pass

    def end_episode(self) -> None:
        pass


class OracleAgent(AgentLearner):
    """Best responder with full knowledge of the MDP.

    At step h in state s it maximizes ``r_a(s, a) + offered[a] + E[V(s')]``.
    The continuation value V is computed under the contract announced for the
    episode, or under r_a alone when none was announced, so an announced
    fixed transfer policy is answered with an exact optimal policy.
    """

    def __init__(self, mdp: FiniteMDP):
        self.mdp = mdp
        self.num_actions = mdp.K
        self._base = value_iteration(mdp, mdp.reward_agent)
        self._contract = None
        self._cont_v = self._base.v

    def start_episode(self, contract=None):
        if contract is None:
            self._contract, self._cont_v = None, self._base.v
        elif contract is not self._contract:
            self._contract = contract
            self._cont_v = value_iteration(self.mdp, self.mdp.reward_agent, contract).v

    def _q(self, h, s, offered):
        return self.mdp.r_a[h, s] + offered + self.mdp.transition[s] @ self._cont_v[h + 1]

    def act(self, h, s, offered):
        return int(np.argmax(self._q(h, s, offered)))

    def action_probs(self, h, s, offered):
        p = np.zeros(self.num_actions)
        p[self.act(h, s, offered)] = 1.0
        return p


def oracle_agent(mdp: FiniteMDP) -> OracleAgent:
    return OracleAgent(mdp)


class FixedPolicyAgent(AgentLearner):
    """Plays a fixed action table ``policy[h, s]`` regardless of transfers."""

    def __init__(self, policy, num_actions: int):
        self.policy = np.asarray(policy, dtype=int)
        self.num_actions = num_actions

    def act(self, h, s, offered):
        return int(self.policy[h, s])

    def action_probs(self, h, s, offered):
        p = np.zeros(self.num_actions)
        p[self.policy[h, s]] = 1.0
        return p


@dataclass
class QLearningConfig:
    """Schedules for :class:`QLearningAgent`.

    ``epsilon_schedule`` is ``"exponential"`` (``epsilon * decay**k``) or
    ``"power"`` (``epsilon * (k + 1)**-power``); both are floored at
    ``epsilon_min``. ``lr_schedule`` is ``"constant"`` or ``"inverse_count"``
    (``max(learning_rate, 1 / N(h, s, a))``). ``q_init=None`` means the
    optimistic value H.
    """

    learning_rate: float = 0.1
    lr_schedule: str = "constant"
    epsilon: float = 1.0
    epsilon_decay: float = 0.999
    epsilon_min: float = 0.05
    epsilon_schedule: str = "exponential"
    epsilon_power: float = 0.5
    q_init: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.lr_schedule not in ("constant", "inverse_count"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not (0.0 <= self.epsilon_min <= 1.0 and 0.0 <= self.epsilon <= 1.0):
            raise ConfigError("epsilon values must lie in [0, 1]")
        if self.epsilon_schedule not in ("exponential", "power"):
            raise ConfigError(f"unknown epsilon_schedule {self.epsilon_schedule!r}")
        if not 0.0 < self.epsilon_decay <= 1.0 or self.epsilon_power < 0:
            raise ConfigError("epsilon_decay must lie in (0, 1] and epsilon_power be >= 0")

    def epsilon_at(self, episode: int) -> float:
        if self.epsilon_schedule == "exponential":
            eps = self.epsilon * self.epsilon_decay ** episode
        else:
            eps = self.epsilon * (episode + 1) ** (-self.epsilon_power)
        return float(min(1.0, max(self.epsilon_min, eps)))


class QLearningAgent(AgentLearner):
    """Epsilon-greedy tabular Q-learning with a step-indexed table.

    The learned quantity is the agent's reward plus the transfer it received;
    offered transfers influence behaviour only through experience.
    """

    def __init__(self, config: QLearningConfig, S: int, K: int, H: int, seed=None):
        self.config = config
        self.num_actions = K
        self.H = H
        q0 = float(H) if config.q_init is None else float(config.q_init)
        self.q = np.full((H, S, K), q0)
        self.counts = np.zeros((H, S, K), dtype=np.int64)
        self.rng = np.random.default_rng(seed)
        self.episode = 0
        self.epsilon = config.epsilon_at(0)

    def act(self, h, s, offered):
        if self.epsilon > 0.0 and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.num_actions))
        return int(np.argmax(self.q[h, s]))

    def action_probs(self, h, s, offered):
        p = np.full(self.num_actions, self.epsilon / self.num_actions)
        p[np.argmax(self.q[h, s])] += 1.0 - self.epsilon
        return p

    def observe(self, h, s, a, reward, s_next):
        self.counts[h, s, a] += 1
        lr = self.config.learning_rate
        if self.config.lr_schedule == "inverse_count":
            lr = max(lr, 1.0 / self.counts[h, s, a])
        target = reward + (self.q[h + 1, s_next].max() if h + 1 < self.H else 0.0)
        self.q[h, s, a] += lr * (target - self.q[h, s, a])

    def end_episode(self):
        self.episode += 1
        self.epsilon = self.config.epsilon_at(self.episode)


def q_learning_agent(config: QLearningConfig, S: int, K: int, H: int, seed=None) -> QLearningAgent:
    return QLearningAgent(config, S, K, H, seed)


@dataclass
class RationalityProfile:
    """Empirical regret profile of an agent against a transfer sequence."""

    shortfall: np.ndarray
    kappa: float
    C: float
    zeta: float
    degenerate: bool = False
    fit_window: tuple = field(default=(0, 0))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.maximum(self.shortfall, 0.0))

    @property
    def confidence(self) -> float:
        return 1.0 - len(self.shortfall) ** (-self.zeta)


TransferSequence = Union[Sequence[TransferPolicy], Callable[[int], TransferPolicy]]


def measure_rationality(agent: AgentLearner, mdp: FiniteMDP, transfer_sequence: TransferSequence,
                        T: int, seed=None, zeta: float = 1.0) -> RationalityProfile:
    """Run ``T`` episodes and measure the per-episode value shortfall.

    Shortfall in episode k is ``V_a(best response to tau_k) - V_a(pi_k, tau_k)``
    where ``pi_k`` is the agent's policy at the start of the episode, both
    evaluated exactly from the initial distribution. The exponent is the
    least-squares slope of log cumulative shortfall against log episode count
    over the second half of the run, clamped to [0, 1].
    """
    if T < 2:
        raise ConfigError("measure_rationality needs T >= 2")
    get = transfer_sequence if callable(transfer_sequence) else transfer_sequence.__getitem__
    sampler = EpisodeSampler(mdp, seed)
    rho = mdp.initial_state_dist
    shortfall = np.empty(T)
    cache_key, best = None, 0.0
    probs = np.empty((mdp.H, mdp.S, mdp.K))
    for k in range(T):
        tau = get(k)
        if tau is not cache_key:
            cache_key = tau
            best = value_iteration(mdp, mdp.reward_agent, tau).value(mdp)
        agent.start_episode(tau)
        for h in range(mdp.H):
            for s in range(mdp.S):
                probs[h, s] = agent.action_probs(h, s, tau.payments[h, s])
        achieved = float(rho @ policy_evaluation(mdp, mdp.reward_agent, probs, tau)[0])
        shortfall[k] = best - achieved
        sampler.run(agent, contract=tau)
    return _fit_profile(shortfall, zeta)


def _fit_profile(shortfall: np.ndarray, zeta: float) -> RationalityProfile:
    T = len(shortfall)
    cum = np.cumsum(np.maximum(shortfall, 0.0))
    start = T // 2
    t = np.arange(start + 1, T + 1)
    y = cum[start:]
    mask = y > 1e-12
    if mask.sum() < 2:
        return RationalityProfile(shortfall, 0.0, 0.0, zeta, degenerate=True, fit_window=(start + 1, T))
    slope = np.polyfit(np.log(t[mask]), np.log(y[mask]), 1)[0]
    kappa = float(np.clip(slope, 0.0, 1.0))
    ts = np.arange(1, T + 1)
    C = float(np.max(cum / ts ** kappa))
    return RationalityProfile(shortfall, kappa, C, zeta, fit_window=(start + 1, T))
