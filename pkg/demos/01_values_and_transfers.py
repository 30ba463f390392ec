"""Backward induction, minimal transfers and why transfers drop out of welfare.

Run: python demos/01_values_and_transfers.py
"""
import numpy as np

from pamdp import (TransferPolicy, chain_mdp, episode_returns, episode_welfare,
                   implementability_check, minimal_transfers, optimal_welfare, value_iteration)

np.set_printoptions(precision=3, suppress=True)

# %% A two-state chain. In s0 the agent can take 0.1 and stay, or take
# nothing and move to s1, where the better action pays 1.0.
mdp = chain_mdp()
sol = value_iteration(mdp, mdp.reward_agent)
print("agent Q at step 0, state s0:", sol.q[0, 0])
print("agent V by step:\n", sol.v)

# %% The smallest payment that makes each action weakly optimal is the
# Q-gap to the best alternative, step by step.
tau_star = minimal_transfers(mdp).tau_star
print("tau* (h, s, a):\n", tau_star)
print("implementable at tau*:", implementability_check(mdp, tau_star).all())
short = tau_star.copy()
short[0, 0, 0] -= 1e-3
print("implementable after shaving 1e-3 off tau*[0, s0, a0]:", implementability_check(mdp, short)[0, 0, 0])

# %% Whatever is paid along a trajectory leaves the principal's pocket and
# enters the agent's, so welfare is unchanged.
traj = [(0, 0, 1), (1, 1, 0)]
for scale in (0.0, 1.0, 5.0):
    tau = TransferPolicy(np.full((2, 2, 2), 0.3 * scale))
    a, p = episode_returns(mdp, traj, tau)
    print(f"transfers x{scale}: agent {a:.2f} + principal {p:.2f} = {a + p:.2f}"
          f" (welfare {episode_welfare(mdp, traj):.2f})")

W, pol = optimal_welfare(mdp)
print("W* =", W, "welfare-optimal actions:\n", pol)
