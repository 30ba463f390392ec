"""Dual-reward episodic MDPs, transfer policies and dynamic programming.

Step indices are 0-based throughout: an episode visits steps
``h = 0, ..., H - 1`` and value tables carry one extra row ``V[H] = 0``.
Reward tables may be stationary ``(S, K)`` or step-indexed ``(H, S, K)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import ConfigError

PROB_TOL = 1e-9


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FiniteMDP:
    """Finite-horizon MDP with separate agent and principal rewards.

    Parameters
    ----------
    transition : array (S, K, S)
        ``transition[s, a, s']`` is P(s' | s, a).
    reward_agent, reward_principal : array (S, K) or (H, S, K)
        Base rewards in [0, 1].
    horizon : int
        Steps per episode.
    initial_state_dist : array (S,)
    """

    transition: np.ndarray
    reward_agent: np.ndarray
    reward_principal: np.ndarray
    horizon: int
    initial_state_dist: np.ndarray

    def __post_init__(self):
        P = _frozen(self.transition)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigError(f"transition must have shape (S, K, S), got {P.shape}")
        S, K, _ = P.shape
        if S < 1 or K < 1:
            raise ConfigError("need at least one state and one action")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_TOL):
            raise ConfigError("every transition row must be a probability vector")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "horizon", int(self.horizon))
        for name in ("reward_agent", "reward_principal"):
            r = _frozen(getattr(self, name))
            if r.shape not in ((S, K), (self.horizon, S, K)):
                raise ConfigError(f"{name} has shape {r.shape}, expected ({S}, {K}) "
                                  f"or ({self.horizon}, {S}, {K})")
            if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
                raise ConfigError(f"{name} entries must lie in [0, 1]")
            object.__setattr__(self, name, r)
        rho = _frozen(self.initial_state_dist)
        if rho.shape != (S,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > PROB_TOL:
            raise ConfigError("initial_state_dist must be a probability vector over states")
        object.__setattr__(self, "initial_state_dist", rho)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    S = num_states
    K = num_actions

    @property
    def H(self) -> int:
        return self.horizon

    @cached_property
    def r_a(self) -> np.ndarray:
        """Agent reward broadcast to (H, S, K)."""
        return _by_step(self.reward_agent, self.horizon)

    @cached_property
    def r_p(self) -> np.ndarray:
        """Principal reward broadcast to (H, S, K)."""
        return _by_step(self.reward_principal, self.horizon)

    @cached_property
    def welfare_reward(self) -> np.ndarray:
        return self.r_a + self.r_p

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=2)

    @cached_property
    def _rho_cdf(self) -> np.ndarray:
        return np.cumsum(self.initial_state_dist)

    def sample_initial(self, rng: np.random.Generator) -> int:
        return min(int(np.searchsorted(self._rho_cdf, rng.random(), side="right")),
                   self.num_states - 1)

    def sample_next(self, s: int, a: int, rng: np.random.Generator) -> int:
        return min(int(np.searchsorted(self._cdf[s, a], rng.random(), side="right")),
                   self.num_states - 1)

    # JSON document: {"S","A","H","P","r_a","r_p","rho0"}, P indexed [s][a][s'].
    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "H": self.horizon,
            "P": self.transition.tolist(),
            "r_a": self.reward_agent.tolist(),
            "r_p": self.reward_principal.tolist(),
            "rho0": self.initial_state_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteMDP":
        try:
            mdp = cls(transition=doc["P"], reward_agent=doc["r_a"],
                      reward_principal=doc["r_p"], horizon=doc["H"],
                      initial_state_dist=doc["rho0"])
        except KeyError as exc:
            raise ConfigError(f"MDP document is missing field {exc.args[0]!r}") from None
        if (doc.get("S", mdp.num_states), doc.get("A", mdp.num_actions)) != (
                mdp.num_states, mdp.num_actions):
            raise ConfigError("declared S/A do not match the table dimensions")
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "FiniteMDP":
        return cls.from_dict(json.loads(text))


def _by_step(table: np.ndarray, H: int) -> np.ndarray:
    if table.ndim == 3:
        return table
    out = np.broadcast_to(table, (H,) + table.shape)
    return out


@dataclass(frozen=True)
class TransferPolicy:
    """Nonnegative payments ``payments[h, s, a]`` offered by the principal."""

    payments: np.ndarray

    def __post_init__(self):
        tau = _frozen(self.payments)
        if tau.ndim != 3:
            raise ConfigError(f"payments must have shape (H, S, K), got {tau.shape}")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise ConfigError("transfers must be finite and nonnegative")
        object.__setattr__(self, "payments", tau)

    @classmethod
    def stationary(cls, table, horizon: int) -> "TransferPolicy":
        table = np.asarray(table, dtype=float)
        return cls(np.repeat(table[None], horizon, axis=0))

    @classmethod
    def zeros(cls, mdp: FiniteMDP) -> "TransferPolicy":
        return cls(np.zeros((mdp.H, mdp.S, mdp.K)))

    @property
    def shape(self):
        return self.payments.shape

    def offer(self, h: int, s: int) -> np.ndarray:
        return self.payments[h, s]

    def scaled(self, factor: float) -> "TransferPolicy":
        return TransferPolicy(self.payments * factor)

    def to_dict(self) -> dict:
        return {"tau": self.payments.tolist()}


def _check_table(mdp: FiniteMDP, table, name: str) -> np.ndarray:
    table = np.asarray(table, dtype=float)
    if table.shape == (mdp.S, mdp.K):
        return _by_step(table, mdp.H)
    if table.shape == (mdp.H, mdp.S, mdp.K):
        return table
    raise ConfigError(f"{name} has shape {table.shape}; expected ({mdp.S}, {mdp.K}) "
                      f"or ({mdp.H}, {mdp.S}, {mdp.K})")


def _transfer_array(mdp: FiniteMDP, transfers) -> np.ndarray:
    if transfers is None:
        return np.zeros((mdp.H, mdp.S, mdp.K))
    tau = transfers.payments if isinstance(transfers, TransferPolicy) else np.asarray(transfers, float)
    return _check_table(mdp, tau, "transfers")


@dataclass(frozen=True)
class ValueSolution:
    """Optimal finite-horizon values.

    ``q`` has shape (H, S, K), ``v`` has shape (H + 1, S) with ``v[H] == 0``
    and ``greedy`` holds the smallest maximizing action per (h, s).
    """

    q: np.ndarray
    v: np.ndarray
    greedy: np.ndarray

    def value(self, mdp: FiniteMDP) -> float:
        """Expected optimal return from the initial distribution."""
        return float(mdp.initial_state_dist @ self.v[0])


def value_iteration(mdp: FiniteMDP, reward, transfers=None) -> ValueSolution:
    """Backward induction on ``reward(s, a) + transfers[h, s, a]``.

    ``reward`` may be (S, K) or (H, S, K); ``transfers`` is a
    :class:`TransferPolicy`, a raw array, or None.
    """
    R = _check_table(mdp, reward, "reward") + _transfer_array(mdp, transfers)
    if not np.all(np.isfinite(R)):
        raise ConfigError("reward entries must be finite")
    H, S, K = mdp.H, mdp.S, mdp.K
    q = np.empty((H, S, K))
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        q[h] = R[h] + mdp.transition @ v[h + 1]
        v[h] = q[h].max(axis=1)
    greedy = q.argmax(axis=2)
    for arr in (q, v, greedy):
        arr.setflags(write=False)
    return ValueSolution(q=q, v=v, greedy=greedy)


def policy_evaluation(mdp: FiniteMDP, reward, policy, transfers=None) -> np.ndarray:
    """State values (H + 1, S) of a non-stationary policy.

    ``policy`` is either an integer table (H, S) of actions or a table of
    action probabilities (H, S, K).
    """
    R = _check_table(mdp, reward, "reward") + _transfer_array(mdp, transfers)
    probs = policy_probabilities(mdp, policy)
    v = np.zeros((mdp.H + 1, mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        q = R[h] + mdp.transition @ v[h + 1]
        v[h] = (probs[h] * q).sum(axis=1)
    return v


def policy_probabilities(mdp: FiniteMDP, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape == (mdp.H, mdp.S):
        probs = np.zeros((mdp.H, mdp.S, mdp.K))
        np.put_along_axis(probs, policy[..., None].astype(int), 1.0, axis=2)
        return probs
    if policy.shape == (mdp.H, mdp.S, mdp.K):
        return policy.astype(float)
    raise ConfigError(f"policy has shape {policy.shape}")


def optimal_welfare(mdp: FiniteMDP):
    """Return ``(W_star, welfare_policy)`` for the summed reward r_a + r_p."""
    sol = value_iteration(mdp, mdp.welfare_reward)
    return sol.value(mdp), sol.greedy


def _check_trajectory(mdp: FiniteMDP, trajectory) -> list:
    steps = [tuple(int(x) for x in step) for step in trajectory]
    if len(steps) != mdp.H:
        raise ValueError(f"trajectory has {len(steps)} steps, expected {mdp.H}")
    for i, (h, s, a) in enumerate(steps):
        if h != i or not (0 <= s < mdp.S) or not (0 <= a < mdp.K):
            raise ValueError(f"malformed trajectory step {i}: {(h, s, a)}")
    return steps


def episode_welfare(mdp: FiniteMDP, trajectory: Iterable[Sequence[int]]) -> float:
    """Sum of r_a + r_p along ``trajectory`` of (h, s, a) triples.

    Transfers never enter this quantity.
    """
    total = 0.0
    for h, s, a in _check_trajectory(mdp, trajectory):
        total += mdp.r_a[h, s, a] + mdp.r_p[h, s, a]
    return float(total)


def episode_returns(mdp: FiniteMDP, trajectory, transfers=None):
    """Transfer-inclusive ``(agent_return, principal_return)`` of a trajectory."""
    tau = _transfer_array(mdp, transfers)
    agent = principal = 0.0
    for h, s, a in _check_trajectory(mdp, trajectory):
        agent += mdp.r_a[h, s, a] + tau[h, s, a]
        principal += mdp.r_p[h, s, a] - tau[h, s, a]
    return float(agent), float(principal)


@dataclass
class Episode:
    """One realized episode. Returns include transfers."""

    states: list
    actions: list
    final_state: int
    agent_return: float
    principal_return: float
    welfare: float
    transfers_paid: float
    principal_rewards: list = field(default_factory=list)

    @property
    def trajectory(self):
        return [(h, s, a) for h, (s, a) in enumerate(zip(self.states, self.actions))]


OfferFn = Callable[[int, int], np.ndarray]


class EpisodeSampler:
    """Simulator the principal and agent interact through.

    With ``bernoulli_principal=True`` the principal's realized reward is a
    Bernoulli draw with mean ``r_p``; otherwise rewards are deterministic.
    """

    def __init__(self, mdp: FiniteMDP, seed=None, bernoulli_principal: bool = False):
        self.mdp = mdp
        self.rng = np.random.default_rng(seed)
        self.bernoulli_principal = bernoulli_principal
        self._zero = np.zeros(mdp.K)
        self._zero.setflags(write=False)

    def run(self, agent, offer: Optional[OfferFn] = None, contract=None) -> Episode:
        """Play one episode.

        ``offer(h, s)`` returns the transfer vector shown to the agent at each
        step. ``contract`` is an optional :class:`TransferPolicy` announced to
        the agent before the episode; when given without ``offer`` it also
        supplies the offers.
        """
        mdp, rng = self.mdp, self.rng
        if offer is None and contract is not None:
            offer = contract.offer
        agent.start_episode(contract)
        s = mdp.sample_initial(rng)
        states, actions, p_rewards = [], [], []
        agent_ret = principal_ret = welfare = paid = 0.0
        for h in range(mdp.H):
            offered = self._zero if offer is None else offer(h, s)
            a = int(agent.act(h, s, offered))
            tau = float(offered[a])
            ra = mdp.r_a[h, s, a]
            rp = mdp.r_p[h, s, a]
            if self.bernoulli_principal:
                rp = float(rng.random() < rp)
            s_next = mdp.sample_next(s, a, rng)
            agent.observe(h, s, a, ra + tau, s_next)
            states.append(s)
            actions.append(a)
            p_rewards.append(rp)
            agent_ret += ra + tau
            principal_ret += rp - tau
            welfare += ra + rp
            paid += tau
            s = s_next
        agent.end_episode()
        return Episode(states, actions, s, float(agent_ret), float(principal_ret),
                       float(welfare), float(paid), p_rewards)
