"""Learn a surrogate reward online from ranked trajectories in the puddle world.

A gamma=0.3 agent alone settles for -11. With the reward learned from its own
rollouts it finds the -6.5 path.

Run with ``python demos/tweak_puddle.py``.
"""
from reward_tweaking import LoopConfig, canonical_puddle_layout, make_puddle_world, run, run_baseline

mdp = make_puddle_world(canonical_puddle_layout())
config = LoopConfig(gamma=0.3, iterations=120, seed=0)

_, _, log = run(mdp, config)
_, base = run_baseline(mdp, 0.3, config)

print("iter  tweaked  baseline  rank_acc")
for rec, b in zip(log.records, base.records):
    if rec["iteration"] % 10 == 0 or rec["iteration"] == config.iterations - 1:
        acc = rec["rank_accuracy"]
        print(f"{rec['iteration']:>4}  {rec['total_return']:>7}  {b['total_return']:>8}  {acc:>8.3f}")
print(f"final: tweaked {log.final_return}, baseline {base.final_return}")
