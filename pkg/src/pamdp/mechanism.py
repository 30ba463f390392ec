"""The principal's two-phase mechanism.

Phase 1 estimates the smallest transfer that makes each action optimal for
the agent, one batched binary search per target. Phase 2 runs optimistic
value iteration (UCB-VI) on the principal's reward net of those transfers,
paying the estimate on whichever action it currently wants played.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Optional

import numpy as np

from .exceptions import BudgetError, ConfigError
from .ledger import EpisodeRecord, RegretLedger
from .mdp import (EpisodeSampler, FiniteMDP, TransferPolicy, optimal_welfare, policy_evaluation,
                  value_iteration)

IMPLEMENTABILITY_TOL = 1e-9


@dataclass(frozen=True)
class MinimalTransferTable:
    tau_star: np.ndarray

    @property
    def stationary_reduction(self) -> np.ndarray:
        """``max_h tau_star[h, s, a]``, shape (S, K)."""
        return self.tau_star.max(axis=0)

    def as_policy(self) -> TransferPolicy:
        return TransferPolicy(self.tau_star)


def minimal_transfers(mdp: FiniteMDP) -> MinimalTransferTable:
    """Smallest payment making each action weakly optimal for the agent.

    ``tau_star[h, s, a] = max_a' (Q_h(s, a') - Q_h(s, a))_+`` with Q the
    agent's optimal action values under r_a alone.
    """
    q = value_iteration(mdp, mdp.reward_agent).q
    tau = np.maximum(q.max(axis=2, keepdims=True) - q, 0.0)
    tau.setflags(write=False)
    return MinimalTransferTable(tau)


def implementability_check(mdp: FiniteMDP, tau_hat) -> np.ndarray:
    """Boolean (H, S, K): does paying ``tau_hat`` on a make a weakly optimal?"""
    q = value_iteration(mdp, mdp.reward_agent).q
    tau_hat = np.asarray(getattr(tau_hat, "payments", tau_hat), dtype=float)
    if tau_hat.shape == (mdp.S, mdp.K):
        tau_hat = np.broadcast_to(tau_hat, q.shape)
    if tau_hat.shape != q.shape:
        raise ConfigError(f"tau_hat has shape {tau_hat.shape}, expected {q.shape}")
    return q + tau_hat >= q.max(axis=2, keepdims=True) - IMPLEMENTABILITY_TOL


class Verdict(str, Enum):
    SUFFICIENT = "Sufficient"
    INSUFFICIENT = "Insufficient"


class Identifiability(NamedTuple):
    verdict: Verdict
    starved: bool = False


def identifiability_test(visits: int, plays_of_a: int, theta: float = 0.5) -> Identifiability:
    """Did the agent play the probed action in at least a ``theta`` share of visits?"""
    if visits <= 0:
        return Identifiability(Verdict.INSUFFICIENT, starved=True)
    if plays_of_a / visits >= theta:
        return Identifiability(Verdict.SUFFICIENT)
    return Identifiability(Verdict.INSUFFICIENT)


def _ceil(x: float) -> int:
    # guards against 4096 ** 0.25 landing a hair above 8
    return int(math.ceil(x - 1e-9))


@dataclass
class Phase1Config:
    """Batched binary-search settings.

    Each batch lasts ``ceil(T**alpha)`` episodes and every target gets
    ``ceil(log2(width * T**beta))`` batches, so the final interval width is
    at most ``T**-beta``. ``width`` defaults to the horizon H.
    ``stationary=True`` estimates one transfer per (s, a) shared by all steps.
    ``kappa`` is the assumed agent exponent used only for the exponent check.
    """

    alpha: float = 0.5
    beta: float = 0.25
    T: int = 4096
    theta: float = 0.5
    width: Optional[float] = None
    stationary: bool = False
    kappa: Optional[float] = None
    budget: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ConfigError("alpha and beta must lie in (0, 1)")
        if not 0 < self.theta < 1:
            raise ConfigError("theta must lie in (0, 1)")
        if self.T < 1:
            raise ConfigError("T must be positive")

    @property
    def batch_length(self) -> int:
        return max(1, _ceil(self.T ** self.alpha))

    def n_batches(self, horizon: int) -> int:
        width = horizon if self.width is None else self.width
        return max(1, _ceil(math.log2(width * self.T ** self.beta)))

    def n_targets(self, mdp: FiniteMDP) -> int:
        return mdp.S * mdp.K * (1 if self.stationary else mdp.H)

    def episodes_needed(self, mdp: FiniteMDP) -> int:
        return self.n_targets(mdp) * self.n_batches(mdp.H) * self.batch_length

    def exponent_violations(self, kappa: Optional[float] = None) -> list:
        kappa = self.kappa if kappa is None else kappa
        if kappa is None:
            return []
        problems = []
        if not kappa < self.alpha:
            problems.append(f"need kappa < alpha, got kappa={kappa}, alpha={self.alpha}")
        if not self.beta / self.alpha < 1 - kappa:
            problems.append(f"need beta/alpha < 1 - kappa, got {self.beta / self.alpha:.3f} >= {1 - kappa:.3f}")
        return problems


@dataclass
class Phase1Result:
    tau_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    starved: np.ndarray
    episodes_used: int
    visit_log: list
    episodes: list
    partial: bool
    n_batches: int
    batch_length: int

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def estimated(self) -> np.ndarray:
        """Targets whose search ran to completion."""
        return ~self.starved


def phase1_estimate(sampler: EpisodeSampler, agent, cfg: Phase1Config) -> Phase1Result:
    """Estimate minimal transfers by batched binary search.

    Every target (h, s, a) keeps an interval [lo, hi] starting at
    [0, width]. A batch offers the midpoint on a at (h, s) and nothing
    elsewhere; if the agent picks a in at least ``theta`` of its visits to
    (h, s) the upper end drops to the midpoint, otherwise the lower end rises.
    Targets are served round-robin in lexicographic order. A batch without a
    single visit aborts its target, which keeps its current upper end and is
    flagged in ``starved``. The estimate is the upper end of each interval.
    """
    mdp = sampler.mdp
    for msg in cfg.exponent_violations():
        warnings.warn(msg, stacklevel=2)
    H, S, K = mdp.H, mdp.S, mdp.K
    width = float(H if cfg.width is None else cfg.width)
    n_batches, L = cfg.n_batches(H), cfg.batch_length
    shape = (S, K) if cfg.stationary else (H, S, K)
    lo, hi = np.zeros(shape), np.full(shape, width)
    starved = np.zeros(shape, dtype=bool)
    targets = list(np.ndindex(*shape))
    budget = cfg.budget
    used, log, episodes, partial = 0, [], [], False
    zero = np.zeros(K)

    for b in range(n_batches):
        for target in targets:
            if starved[target]:
                continue
            if budget is not None and used + L > budget:
                partial = True
                break
            mid = 0.5 * (lo[target] + hi[target])
            if cfg.stationary:
                s, a = target
                steps = range(H)
            else:
                h, s, a = target
                steps = (h,)
            vec = zero.copy()
            vec[a] = mid

            def offer(hh, ss, _s=s, _steps=steps, _vec=vec):
                return _vec if ss == _s and hh in _steps else zero

            visits = plays = 0
            for _ in range(L):
                ep = sampler.run(agent, offer)
                episodes.append(ep)
                for hh in steps:
                    if ep.states[hh] == s:
                        visits += 1
                        plays += ep.actions[hh] == a
            used += L
            outcome = identifiability_test(visits, plays, cfg.theta)
            log.append({"batch": b, "target": tuple(int(i) for i in target), "offer": mid,
                        "visits": visits, "plays": int(plays), "verdict": outcome.verdict.value,
                        "starved": outcome.starved})
            if outcome.starved:
                starved[target] = True
            elif outcome.verdict is Verdict.SUFFICIENT:
                hi[target] = mid
            else:
                lo[target] = mid
        if partial:
            break

    tau_hat = hi.copy()
    if cfg.stationary:
        tau_hat, lo, hi, starved = (np.broadcast_to(x, (H, S, K)).copy()
                                    for x in (tau_hat, lo, hi, starved))
    return Phase1Result(tau_hat, lo, hi, starved, used, log, episodes, partial, n_batches, L)


@dataclass
class Phase2Config:
    """UCB-VI settings.

    ``known_model=True`` plans on the true model with no bonus.
    ``offer_scope="path"`` pays only in states the intended policy can reach
    under the principal's model; ``"all"`` pays in every state.
    """

    bonus_scale: float = 1.0
    delta: float = 0.05
    episodes: Optional[int] = None
    known_model: bool = False
    offer_scope: str = "path"

    def __post_init__(self):
        if self.bonus_scale < 0 or not 0 < self.delta < 1:
            raise ConfigError("bonus_scale must be >= 0 and delta in (0, 1)")
        if self.offer_scope not in ("path", "all"):
            raise ConfigError(f"unknown offer_scope {self.offer_scope!r}")


@dataclass
class Phase2Result:
    episodes: list
    intended: list
    regret: np.ndarray
    deviated: np.ndarray
    policies: list = field(default_factory=list)


class UCBVIPlanner:
    """Optimistic value iteration on empirical counts.

    Rewards are the principal's observed rewards minus ``tau_hat``; the bonus
    is ``c * H * sqrt(log(S K H n / delta) / max(1, N(s, a)))``.
    """

    def __init__(self, mdp_shape, tau_hat: np.ndarray, cfg: Phase2Config, n_episodes: int):
        H, S, K = mdp_shape
        self.H, self.S, self.K = H, S, K
        self.tau_hat = np.asarray(tau_hat, dtype=float)
        self.cfg = cfg
        self.log_term = math.log(max(S * K * H * max(n_episodes, 1) / cfg.delta, 1.0))
        self.n_sa = np.zeros((S, K))
        self.n_sas = np.zeros((S, K, S))
        self.n_hsa = np.zeros((H, S, K))
        self.r_sum = np.zeros((H, S, K))
        self.n_init = np.zeros(S)

    def bonus(self) -> np.ndarray:
        return self.cfg.bonus_scale * self.H * np.sqrt(self.log_term / np.maximum(1.0, self.n_sa))

    def reachable(self, policy: np.ndarray) -> np.ndarray:
        """(H, S) mask of states the policy can reach under the empirical model.

        Any unexplored (s, a) on the way is assumed to lead anywhere.
        """
        init = self.n_init > 0 if self.n_init.any() else np.ones(self.S, dtype=bool)
        return reachable_states(policy, self.n_sas > 0, self.n_sa > 0, init)

    def update(self, episode) -> None:
        self.n_init[episode.states[0]] += 1
        for h, (s, a) in enumerate(zip(episode.states, episode.actions)):
            s_next = episode.states[h + 1] if h + 1 < len(episode.states) else episode.final_state
            self.n_sa[s, a] += 1
            self.n_sas[s, a, s_next] += 1
            self.n_hsa[h, s, a] += 1
            self.r_sum[h, s, a] += episode.principal_rewards[h]

    def plan(self) -> np.ndarray:
        H = self.H
        seen = self.n_sa > 0
        p_hat = self.n_sas / np.maximum(self.n_sa, 1.0)[..., None]
        r_hat = np.where(self.n_hsa > 0, self.r_sum / np.maximum(self.n_hsa, 1.0), 1.0)
        r_eff = r_hat - self.tau_hat
        bonus = self.bonus()
        v = np.zeros(self.S)
        policy = np.empty((H, self.S), dtype=int)
        for h in range(H - 1, -1, -1):
            cap = H - h
            q = r_eff[h] + bonus + p_hat @ v
            q = np.where(seen, np.minimum(q, cap), cap)
            policy[h] = q.argmax(axis=1)
            v = q.max(axis=1)
        return policy


def reachable_states(policy, support, seen, init) -> np.ndarray:
    H, S = policy.shape
    reach = np.zeros((H, S), dtype=bool)
    reach[0] = init
    for h in range(H - 1):
        states = np.nonzero(reach[h])[0]
        actions = policy[h, states]
        if not seen[states, actions].all():
            reach[h + 1] = True
        else:
            reach[h + 1] = support[states, actions].any(axis=0)
    return reach


def phase2_ucbvi(sampler: EpisodeSampler, agent, tau_hat, cfg: Phase2Config,
                 episodes: int) -> Phase2Result:
    """Run UCB-VI on ``r_p - tau_hat`` for ``episodes`` episodes.

    Each step the principal offers ``tau_hat[h, s, a]`` on its intended
    action a and zero elsewhere. With ``offer_scope="path"`` nothing is
    offered in states the intended policy cannot reach, since payments off
    the intended path can make detours attractive to a forward-looking
    agent. ``regret[k]`` is the principal's expected shortfall on the
    shifted reward for the policy planned in episode k.
    """
    mdp = sampler.mdp
    tau_hat = np.asarray(getattr(tau_hat, "payments", tau_hat), dtype=float)
    if tau_hat.shape == (mdp.S, mdp.K):
        tau_hat = np.broadcast_to(tau_hat, (mdp.H, mdp.S, mdp.K))
    if tau_hat.shape != (mdp.H, mdp.S, mdp.K):
        raise ConfigError(f"tau_hat has shape {tau_hat.shape}")
    shifted = mdp.r_p - tau_hat
    best = value_iteration(mdp, shifted).value(mdp)
    rho = mdp.initial_state_dist

    if cfg.known_model:
        fixed_policy = value_iteration(mdp, shifted).greedy
        planner = None
    else:
        planner = UCBVIPlanner((mdp.H, mdp.S, mdp.K), tau_hat, cfg, episodes)

    eps, intended, regret, deviated = [], [], np.empty(episodes), np.zeros(episodes, dtype=bool)
    last_policy, last_value = None, 0.0
    for k in range(episodes):
        policy = fixed_policy if planner is None else planner.plan()
        if last_policy is None or not np.array_equal(policy, last_policy):
            last_value = float(rho @ policy_evaluation(mdp, shifted, policy)[0])
            last_policy = policy
        regret[k] = best - last_value
        offers = np.zeros((mdp.H, mdp.S, mdp.K))
        np.put_along_axis(offers, policy[..., None],
                          np.take_along_axis(tau_hat, policy[..., None], axis=2), axis=2)
        if cfg.offer_scope == "path":
            if planner is None:
                reach = reachable_states(policy, mdp.transition > 0, np.ones((mdp.S, mdp.K), bool),
                                         mdp.initial_state_dist > 0)
            else:
                reach = planner.reachable(policy)
            offers[~reach] = 0.0
        ep = sampler.run(agent, lambda h, s: offers[h, s])
        wanted = [int(policy[h, s]) for h, s in enumerate(ep.states)]
        deviated[k] = wanted != ep.actions
        intended.append(wanted)
        eps.append(ep)
        if planner is not None:
            planner.update(ep)
    return Phase2Result(eps, intended, regret, deviated)


def minimum_feasible_T(mdp: FiniteMDP, cfg: Phase1Config) -> int:
    """Smallest T for which Phase 1 fits in half of the episode budget."""
    def ok(T):
        return replace(cfg, T=T).episodes_needed(mdp) <= T / 2

    hi = 2
    while not ok(hi):
        hi *= 2
        if hi > 2 ** 62:
            raise BudgetError("no feasible episode budget for this Phase-1 configuration")
    lo = hi // 2
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def records_from_episodes(episodes, phase: str, start: int = 0, seed=None,
                          terminal_fn: Optional[Callable[[int], float]] = None,
                          deviated=None) -> list:
    out = []
    for i, ep in enumerate(episodes):
        out.append(EpisodeRecord(
            episode=start + i, phase=phase, agent_return=ep.agent_return,
            principal_return=ep.principal_return, welfare=ep.welfare,
            terminal_pollution=None if terminal_fn is None else terminal_fn(ep.final_state),
            seed=seed, deviated=bool(deviated[i]) if deviated is not None else False))
    return out


def two_phase_run(sampler: EpisodeSampler, agent, cfg1: Phase1Config, cfg2: Phase2Config, T: int,
                  seed=None, terminal_fn=None) -> RegretLedger:
    """Phase 1 followed by Phase 2 on the remaining budget of ``T`` episodes.

    Raises :class:`BudgetError` when Phase 1 would need more than T / 2
    episodes; the error carries the minimum feasible T.
    """
    mdp = sampler.mdp
    cfg1 = replace(cfg1, T=T, budget=None)
    need = cfg1.episodes_needed(mdp)
    if need > T / 2:
        min_T = minimum_feasible_T(mdp, cfg1)
        raise BudgetError(f"Phase 1 needs {need} episodes but only {T // 2} of T={T} are allowed; "
                          f"minimum T is {min_T}", min_episodes=min_T)
    p1 = phase1_estimate(sampler, agent, cfg1)
    p2 = phase2_ucbvi(sampler, agent, p1.tau_hat, cfg2, T - p1.episodes_used)
    W_star, _ = optimal_welfare(mdp)
    records = records_from_episodes(p1.episodes, "Phase1", 0, seed, terminal_fn)
    records += records_from_episodes(p2.episodes, "Phase2", p1.episodes_used, seed, terminal_fn,
                                     p2.deviated)
    meta = {"phase1_episodes": p1.episodes_used, "tau_hat": p1.tau_hat, "starved": p1.starved,
            "phase2_regret": p2.regret, "T": T}
    return RegretLedger(records, W_star, seed=seed, meta=meta)
