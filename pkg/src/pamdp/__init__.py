"""Principal-agent episodic MDPs with transfers.

Exact dynamic programming for dual-reward MDPs, agent models, the two-phase
transfer mechanism (binary-search estimation, then UCB-VI on shifted
rewards), experiment harness, and Gaussian checks of Bayes denoising as a
welfare-maximizing planner.
"""
from .agents import (AgentLearner, FixedPolicyAgent, OracleAgent, QLearningAgent, QLearningConfig,
                     RationalityProfile, measure_rationality, oracle_agent, q_learning_agent)
from .envs import (LineWorldConfig, build_lineworld, build_subsidy_policy, chain_mdp, random_mdp)
from .exceptions import BudgetError, ConfigError, EmissionError
from .ledger import EpisodeRecord, PowerLawFit, RegretLedger, fit_regret_exponent
from .mdp import (EpisodeSampler, FiniteMDP, TransferPolicy, ValueSolution, episode_returns,
                  episode_welfare, optimal_welfare, policy_evaluation, value_iteration)
from .mechanism import (MinimalTransferTable, Phase1Config, Phase2Config, identifiability_test,
                        implementability_check, minimal_transfers, phase1_estimate, phase2_ucbvi,
                        two_phase_run)

__version__ = "0.1.0"
