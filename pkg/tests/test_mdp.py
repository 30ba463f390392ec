import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enumerate_policy_values, one_state_mdp
from pamdp import (ConfigError, EpisodeSampler, FiniteMDP, FixedPolicyAgent, TransferPolicy,
                   chain_mdp, episode_returns, episode_welfare, optimal_welfare,
                   policy_evaluation, random_mdp, value_iteration)


class TestFiniteMDP:
    def test_shapes_and_aliases(self, chain):
        assert (chain.S, chain.K, chain.H) == (2, 2, 2)
        assert chain.num_states == 2 and chain.num_actions == 2
        assert chain.r_a.shape == (2, 2, 2)

    @pytest.mark.parametrize("bad", [
        dict(transition=np.full((2, 2, 2), 0.6)),
        dict(reward_agent=np.full((2, 2), 1.5)),
        dict(reward_principal=-np.ones((2, 2))),
        dict(horizon=0),
        dict(initial_state_dist=[0.5, 0.6]),
    ])
    def test_rejects_invalid(self, chain, bad):
        fields = dict(transition=chain.transition, reward_agent=chain.reward_agent,
                      reward_principal=chain.reward_principal, horizon=2,
                      initial_state_dist=chain.initial_state_dist)
        fields.update(bad)
        with pytest.raises(ConfigError):
            FiniteMDP(**fields)

    def test_json_round_trip(self):
        mdp = random_mdp(4, 3, 5, seed=3)
        doc = json.loads(mdp.to_json())
        assert set(doc) == {"S", "A", "H", "P", "r_a", "r_p", "rho0"}
        again = FiniteMDP.from_json(mdp.to_json())
        np.testing.assert_array_equal(again.transition, mdp.transition)
        np.testing.assert_array_equal(again.r_p, mdp.r_p)
        assert again.H == mdp.H

    def test_immutable(self, chain):
        with pytest.raises(ValueError):
            chain.transition[0, 0, 0] = 0.5


class TestTransferPolicy:
    def test_stationary_replicates(self):
        tau = TransferPolicy.stationary([[0.0, 0.3], [0.1, 0.0]], 4)
        assert tau.shape == (4, 2, 2)
        assert all(np.array_equal(tau.payments[h], tau.payments[0]) for h in range(4))

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            TransferPolicy(-np.ones((1, 1, 2)))


class TestValueIteration:
    def test_single_step(self, bandit_mdp):
        sol = value_iteration(bandit_mdp, bandit_mdp.reward_agent)
        np.testing.assert_allclose(sol.q[0, 0], [0.9, 0.3])
        assert sol.v[0, 0] == pytest.approx(0.9)

    def test_chain_hand_values(self, chain):
        sol = value_iteration(chain, chain.reward_agent)
        np.testing.assert_allclose(sol.q[0, 0], [0.2, 1.0])
        np.testing.assert_allclose(sol.v[1], [0.1, 1.0])
        np.testing.assert_array_equal(sol.v[2], 0.0)

    @pytest.mark.parametrize("c", [0.0, 0.25, 1.0])
    def test_constant_reward_telescopes(self, c):
        mdp = random_mdp(3, 2, 5, seed=1)
        sol = value_iteration(mdp, np.full((3, 2), c))
        for h in range(6):
            np.testing.assert_allclose(sol.v[h], (5 - h) * c)

    def test_tie_break_smallest_index(self):
        mdp = one_state_mdp([0.5, 0.5, 0.5])
        assert value_iteration(mdp, mdp.reward_agent).greedy[0, 0] == 0

    def test_dimension_mismatch(self, chain):
        with pytest.raises(ConfigError):
            value_iteration(chain, np.zeros((3, 2)))
        with pytest.raises(ConfigError):
            value_iteration(chain, chain.reward_agent, np.zeros((1, 2, 2)))

    def test_matches_enumeration(self, small_mdp):
        brute = enumerate_policy_values(small_mdp, small_mdp.reward_agent).max()
        assert value_iteration(small_mdp, small_mdp.reward_agent).value(small_mdp) == \
            pytest.approx(brute, abs=1e-12)

    def test_greedy_policy_attains_optimum(self, small_mdp):
        sol = value_iteration(small_mdp, small_mdp.reward_principal)
        v = policy_evaluation(small_mdp, small_mdp.reward_principal, sol.greedy)
        np.testing.assert_allclose(v, sol.v, atol=1e-12)

    def test_deterministic(self, small_mdp):
        a = value_iteration(small_mdp, small_mdp.reward_agent).greedy
        b = value_iteration(small_mdp, small_mdp.reward_agent).greedy
        np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(0, 3), s=st.integers(0, 2), a=st.integers(0, 1),
       bump=st.floats(0.0, 3.0))
def test_raising_a_transfer_never_lowers_its_q(seed, h, s, a, bump):
    mdp = random_mdp(3, 2, 4, seed=seed)
    tau = np.random.default_rng(seed).random((4, 3, 2))
    before = value_iteration(mdp, mdp.reward_agent, tau).q[h, s, a]
    tau[h, s, a] += bump
    assert value_iteration(mdp, mdp.reward_agent, tau).q[h, s, a] >= before - 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_value_bounds(seed):
    mdp = random_mdp(4, 3, 5, seed=seed)
    tau = np.random.default_rng(seed).random((5, 4, 3)) * 2
    sol = value_iteration(mdp, mdp.reward_agent, tau)
    for h in range(5):
        assert np.all(sol.v[h] >= 0)
        assert np.all(sol.v[h] <= (5 - h) * (1 + tau.max()) + 1e-12)
        np.testing.assert_allclose(sol.v[h], sol.q[h].max(axis=1))


class TestWelfare:
    def test_single_step_sum(self):
        mdp = one_state_mdp([[0.4, 0.0]], [[0.5, 0.0]])
        assert episode_welfare(mdp, [(0, 0, 0)]) == pytest.approx(0.9)

    def test_transfers_excluded(self, chain):
        traj = [(0, 0, 1), (1, 1, 0)]
        a, p = episode_returns(chain, traj, TransferPolicy(np.full((2, 2, 2), 0.7)))
        assert a + p == pytest.approx(episode_welfare(chain, traj), abs=1e-12)
        assert a == pytest.approx(1.0 + 1.4)

    def test_chain_welfare_is_agent_return(self, chain):
        traj = [(0, 0, 1), (1, 1, 0)]
        assert episode_welfare(chain, traj) == pytest.approx(episode_returns(chain, traj)[0])

    @pytest.mark.parametrize("traj", [[(0, 0, 0)], [(0, 0, 0), (0, 1, 0)], [(0, 0, 0), (1, 5, 0)],
                                      [(0, 0, 0), (1, 0, 2)]])
    def test_malformed(self, chain, traj):
        with pytest.raises(ValueError):
            episode_welfare(chain, traj)

    def test_optimal_welfare_constant(self):
        mdp = random_mdp(3, 2, 4, seed=0)
        r = np.full((3, 2), 0.5)
        mdp = FiniteMDP(mdp.transition, r, r, 4, mdp.initial_state_dist)
        assert optimal_welfare(mdp)[0] == pytest.approx(4.0)

    def test_optimal_welfare_chain(self, chain):
        W, pol = optimal_welfare(chain)
        assert W == pytest.approx(1.0)
        assert pol[0, 0] == 1 and pol[1, 1] == 0

    def test_welfare_picks_third_action(self):
        mdp = one_state_mdp([0.9, 0.1, 0.5], [0.0, 0.8, 0.5])
        W, pol = optimal_welfare(mdp)
        assert pol[0, 0] == 2 and W == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), S=st.integers(1, 5), K=st.integers(1, 3), H=st.integers(1, 5))
def test_sampled_episodes_cancel_transfers(seed, S, K, H):
    mdp = random_mdp(S, K, H, seed=seed)
    rng = np.random.default_rng(seed)
    tau = TransferPolicy(rng.exponential(size=(H, S, K)))
    agent = FixedPolicyAgent(rng.integers(0, K, (H, S)), K)
    ep = EpisodeSampler(mdp, seed).run(agent, contract=tau)
    assert abs(ep.agent_return + ep.principal_return - ep.welfare) <= 1e-12 * max(1.0, abs(ep.welfare))
    assert ep.welfare == pytest.approx(episode_welfare(mdp, ep.trajectory), abs=1e-12)


def test_sampler_seeded():
    mdp = random_mdp(4, 2, 6, seed=5)
    agent = FixedPolicyAgent(np.zeros((6, 4), int), 2)
    a = [EpisodeSampler(mdp, 9).run(agent).states for _ in range(3)]
    b = [EpisodeSampler(mdp, 9).run(agent).states for _ in range(3)]
    assert a == b


def test_chain_builder_matches_description():
    mdp = chain_mdp(r_p=0.25)
    np.testing.assert_array_equal(mdp.transition[0, 1], [0, 1])
    np.testing.assert_array_equal(mdp.r_p, 0.25)
