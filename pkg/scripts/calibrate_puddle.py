"""Brute-force search for puddle-world layouts that hit the target constants.

Targets: optimal total return -6.5, total return -11 for the 0.3-discounted
optimal policy, and a critical discount within 0.05 of 0.7. Candidates are
rectangular puddles on grids with the start in the bottom-left corner and
the goal on the right wall.

    python scripts/calibrate_puddle.py [--max-width 9] [--max-height 5]
"""
import argparse
import itertools
import json

import numpy as np

from reward_tweaking.environments import PuddleLayout, make_puddle_world
from reward_tweaking.mdp_core import (
    find_gamma_crit,
    optimal_total_return,
    rollout,
    solve_optimal,
    total_return,
)


def candidates(max_width, max_height, horizons):
    for W in range(3, max_width + 1):
        for H in range(1, max_height + 1):
            goal = W - 1
            for r0, c0 in itertools.product(range(H), range(goal)):
                for h, w in itertools.product(range(1, H - r0 + 1), range(1, goal - c0 + 1)):
                    cells = frozenset((r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w))
                    for T in horizons:
                        if T < goal:
                            continue
                        yield PuddleLayout(W, H, (H - 1, 0), goal, cells, T)


def score(layout):
    mdp = make_puddle_world(layout)
    if abs(optimal_total_return(mdp) - (-6.5)) > 1e-9:
        return None
    if abs(total_return(mdp, solve_optimal(mdp, 0.3)[0]) - (-11.0)) > 1e-9:
        return None
    crit = find_gamma_crit(mdp)
    if abs(crit - 0.7) > 0.05:
        return None
    path = rollout(mdp, solve_optimal(mdp, 1.0)[0], layout.state(layout.start_cell))
    crossed = sum(layout.cell(s) in layout.puddle_cells for s in path.states[:-1])
    return {"gamma_crit": crit, "puddle_cells_on_optimal_path": crossed}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--max-width", type=int, default=9)
    ap.add_argument("--max-height", type=int, default=5)
    ap.add_argument("--horizons", type=int, nargs="+", default=list(range(7, 25)))
    args = ap.parse_args()
    hits = []
    for layout in candidates(args.max_width, args.max_height, args.horizons):
        result = score(layout)
        if result is not None:
            hits.append((layout, result))
            print(json.dumps({**layout.to_dict(), **result}))
    print(f"{len(hits)} layouts satisfy all three constants")


if __name__ == "__main__":
    main()
