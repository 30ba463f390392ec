"""Shared fixtures and independent oracles.

The oracles here deliberately avoid backward induction over value tables so
they can check the package solver rather than restate it.
"""
import itertools

import numpy as np
import pytest

from pamdp import FiniteMDP, chain_mdp, random_mdp


def enumerate_policy_values(mdp: FiniteMDP, reward, chunk: int = 20_000) -> np.ndarray:
    """Expected return of every deterministic non-stationary policy.

    Policies are enumerated as integers in base K over the H*S decision
    slots and evaluated by pushing the state distribution forward, so no
    Bellman recursion is involved.
    """
    H, S, K = mdp.H, mdp.S, mdp.K
    R = np.broadcast_to(np.asarray(reward, float), (H, S, K)) if np.ndim(reward) == 2 else np.asarray(reward)
    n_slots = H * S
    total = K ** n_slots
    out = np.empty(total)
    powers = K ** np.arange(n_slots)
    rows = np.arange(S)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(total, start + chunk))
        acts = (ids[:, None] // powers) % K              # (N, H*S)
        acts = acts.reshape(-1, H, S)
        dist = np.tile(mdp.initial_state_dist, (len(ids), 1))
        value = np.zeros(len(ids))
        for h in range(H):
            a = acts[:, h, :]                              # (N, S)
            value += (dist * R[h][rows, a]).sum(axis=1)
            trans = mdp.transition[rows, a]                # (N, S, S)
            dist = np.einsum("ns,nst->nt", dist, trans)
        out[start:start + len(ids)] = value
    return out


def expectimax(mdp: FiniteMDP, reward) -> float:
    """Plain recursive tree search from the initial distribution, no memo."""
    R = np.broadcast_to(np.asarray(reward, float), (mdp.H, mdp.S, mdp.K)) if np.ndim(reward) == 2 \
        else np.asarray(reward)

    def best(h, s):
        if h == mdp.H:
            return 0.0
        vals = []
        for a in range(mdp.K):
            cont = sum(p * best(h + 1, s2) for s2, p in enumerate(mdp.transition[s, a]) if p > 0)
            vals.append(R[h, s, a] + cont)
        return max(vals)

    return sum(p * best(0, s) for s, p in enumerate(mdp.initial_state_dist) if p > 0)


def one_state_mdp(r_a, r_p=None, H=1):
    r_a = np.atleast_2d(np.asarray(r_a, float))
    K = r_a.shape[1]
    r_p = np.zeros_like(r_a) if r_p is None else np.atleast_2d(np.asarray(r_p, float))
    return FiniteMDP(np.ones((1, K, 1)), r_a, r_p, H, [1.0])


@pytest.fixture
def chain():
    return chain_mdp()


@pytest.fixture
def bandit_mdp():
    return one_state_mdp([0.9, 0.3])


@pytest.fixture(params=[0, 1, 2])
def small_mdp(request):
    return random_mdp(3, 2, 3, seed=request.param)


def small_shapes(limit=200):
    return [(S, K, H) for S, K, H in itertools.product(range(1, 11), range(1, 5), range(1, 7))
            if S * K * H <= limit]
