"""Two-phase mechanism: learn the transfers, then learn the principal's policy.

Takes about 30 seconds.
Run: python demos/03_two_phase_mechanism.py
"""
import numpy as np

from pamdp import (EpisodeSampler, OracleAgent, Phase1Config, Phase2Config, QLearningAgent,
                   QLearningConfig, chain_mdp, minimal_transfers, phase1_estimate, two_phase_run)
from pamdp.mechanism import minimum_feasible_T

np.set_printoptions(precision=3, suppress=True)
mdp = chain_mdp()

# %% Phase 1 alone, against a best responder. Each target gets
# ceil(log2(H T^beta)) batches of ceil(T^alpha) episodes.
cfg = Phase1Config(alpha=0.5, beta=0.25, T=4096)
res = phase1_estimate(EpisodeSampler(mdp, 0), OracleAgent(mdp), cfg)
print(f"{res.n_batches} batches x {res.batch_length} episodes, {res.episodes_used} used")
print("tau_hat - tau* on estimated targets:",
      (res.tau_hat - minimal_transfers(mdp).tau_star)[res.estimated])
print("starved (never visited during their batch):", np.argwhere(res.starved[..., 0]).tolist())

# %% The budget check: Phase 1 must fit in half of T.
print("smallest feasible T at alpha=0.5:", minimum_feasible_T(mdp, cfg))
print("smallest feasible T at alpha=0.4:", minimum_feasible_T(mdp, Phase1Config(alpha=0.4)))

# %% Full runs against a Q-learner whose exploration decays like k^-1/2.
agent_cfg = QLearningConfig(epsilon_schedule="power", epsilon_power=0.5, epsilon_min=0.0)
for T in (2 ** 12, 2 ** 14, 2 ** 16):
    ledger = two_phase_run(EpisodeSampler(mdp, 1), QLearningAgent(agent_cfg, 2, 2, 2, seed=1),
                           Phase1Config(alpha=0.4), Phase2Config(), T, seed=1)
    parts = {k: round(v, 1) for k, v in ledger.decomposition().items()}
    print(f"T={T:6d}  R_sw={ledger.R_sw():8.1f}  R_sw/T={ledger.R_sw() / T:.4f}  {parts}")
