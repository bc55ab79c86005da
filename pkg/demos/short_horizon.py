"""Why a small discount hurts, and how a time-dependent reward undoes it.

Run with ``python demos/short_horizon.py``.
"""
import numpy as np

from reward_tweaking import (
    build_theorem1_reward,
    canonical_puddle_layout,
    find_gamma_crit,
    make_four_state_mdp,
    make_puddle_world,
    solve_optimal,
    total_return,
)
from reward_tweaking.exact_surrogate import minimal_time_slice

mdp = make_four_state_mdp(0.5, 0.0, 2.0)
print("four-state MDP")
for gamma in (0.2, 0.33, 0.34, 0.9):
    policy, _ = solve_optimal(mdp, gamma)
    name = mdp.action_names[policy.action(0, 0)]
    print(f"  gamma={gamma:<5} start action={name:<5} total return={total_return(mdp, policy)}")
print(f"  gamma_crit={find_gamma_crit(mdp)}")

# the corrected reward makes the gamma=0.2 agent act like the undiscounted one
sur = build_theorem1_reward(mdp, 1.0, 0.2)
policy, _ = solve_optimal(mdp, 0.2, sur)
print(f"  with corrected reward at gamma=0.2: total return={total_return(mdp, policy)}")

layout = canonical_puddle_layout()
puddle = make_puddle_world(layout)
print("\npuddle world")
for gamma in (0.3, 0.7, 1.0):
    print(f"  gamma={gamma}: total return={total_return(puddle, solve_optimal(puddle, gamma)[0])}")
print(f"  gamma_crit={find_gamma_crit(puddle)}")

np.set_printoptions(precision=1, suppress=True, linewidth=120)
for gamma in (0.0, 1.0):
    print(f"\n  corrected reward at the earliest visit time, gamma={gamma}")
    print(minimal_time_slice(build_theorem1_reward(puddle, 1.0, gamma), layout))
