"""The pollution line-world: a learning agent with and without a detour subsidy.

Writes CSV and SVG files to out/demo_lineworld/. Takes about 15 seconds.
Run: python demos/02_lineworld_subsidy.py
"""
from pathlib import Path

import numpy as np

from pamdp import LineWorldConfig, build_lineworld, build_subsidy_policy, optimal_welfare, value_iteration
from pamdp.envs import ACTION_NAMES, DETOUR
from pamdp.harness import emit_csv, emit_svg, run_experiment

cfg = LineWorldConfig()
mdp = build_lineworld(cfg)

# %% What a perfectly rational agent would do in each case.
plain = value_iteration(mdp, mdp.reward_agent).greedy
paid = value_iteration(mdp, mdp.reward_agent, build_subsidy_policy(cfg)).greedy
start = cfg.encode(0, 0)
print("oracle first action, no subsidy:", ACTION_NAMES[plain[0, start]])
print("oracle first action, subsidy   :", ACTION_NAMES[paid[0, start]])
print("detour cells in subsidized table:", int((paid == DETOUR).sum()))
print("W* =", round(optimal_welfare(mdp)[0], 3))

# %% Now an epsilon-greedy Q-learner, 8 seeds x 5000 episodes per scenario.
result = run_experiment({"env": {"kind": "lineworld"}, "scenario": ["baseline", "subsidy"],
                         "episodes": 5000, "seeds": list(range(1, 9))})
for sc in ("baseline", "subsidy"):
    print(f"{sc:8s} last-500 welfare {result.tail_mean(sc):.3f}, "
          f"terminal pollution {result.tail_mean(sc, 'pollution'):.2f}")

out = Path("out/demo_lineworld")
out.mkdir(parents=True, exist_ok=True)
for sc, ledgers in result.ledgers.items():
    emit_csv(ledgers, out / f"{sc}.csv")
emit_svg(result.ledgers, out / "welfare.svg", "welfare")
emit_svg(result.ledgers, out / "pollution.svg", "pollution")
print("wrote", sorted(p.name for p in out.iterdir()))
