"""Command-line harness: ``reward-tweak COMMAND [--config FILE] [--out DIR] [--seed N] [--jobs N]``.

Commands are ``solve``, ``gamma-crit``, ``tweak``, ``robustness`` and
``theorems``. Exit codes: 0 success, 1 a checked property failed, 2 usage or
config error. Errors are printed to stderr as one JSON object with an
``error`` key.

Config files are JSON objects with ``schema_version: 1``; unknown keys are
rejected. Every key is optional. Defaults per command:

``solve``
    ``environment`` (four_state), ``gamma`` (1.0)
``gamma-crit``
    ``environment`` (four_state), ``grid_step`` (0.01), ``tolerance`` (1e-9)
``tweak``
    ``environment`` (puddle), ``gammas`` ([0.3]), ``heatmap_gammas``
    ([0.0, 0.5, 1.0]), ``loop`` (overrides for
    :class:`reward_tweaking.adaptive_loop.LoopConfig` other than gamma and seed)
``robustness``
    ``trials`` (1000), ``modes`` (both), ``epsilon_p`` (null: drawn per trial)
``theorems``
    ``gammas`` ([0, 0.3, 0.7, 1]), ``random_mdps`` (25), ``trajectories`` (500),
    ``theorem2_gammas`` ([0.5, 0.9, 1.0]), ``counterexample_samples`` (1000),
    ``scale_alphas`` ([1e-3, 1, 1e3]), ``wrong_sign_theorem1`` (false)

An ``environment`` block has a ``name`` and parameters:

* ``{"name": "four_state", "r_a": 0.5, "r_b": 0.0, "r_c": 2.0}``
* ``{"name": "chain", "n": 10, "rewards": [...], "horizon": 12, "start": 0}``
* ``{"name": "chain_fixture"}``
* ``{"name": "puddle"}`` with optional ``layout`` (inline layout object) or
  ``layout_path``
* ``{"name": "random", "num_states": 6, "num_actions": 2, "horizon": 8, "seed": 0}``
* ``{"name": "mdp_file", "path": "mdp.json"}``

``--seed`` (default 0) seeds every random draw. Each run writes its artifacts
plus ``manifest.json`` (command, resolved config, seed, code version,
artifact hashes) to ``--out``; reruns with the same inputs produce
byte-identical files regardless of ``--jobs``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import adaptive_loop, exact_surrogate, robustness_lab
from .environments import (
    GRID_ACTIONS,
    PuddleLayout,
    make_chain_fixture,
    make_chain_mdp,
    make_four_state_mdp,
    make_puddle_world,
    make_random_mdp,
)
from .mdp_core import (
    FiniteHorizonMdp,
    SurrogateReward,
    default_gamma_grid,
    find_gamma_crit,
    gamma_sweep,
    optimal_total_return,
    sample_trajectory,
    solve_optimal,
    total_return,
)
from .ranking_learner import to_surrogate
from .serialization import (
    SCHEMA_VERSION,
    canonical_puddle_layout,
    layout_from_dict,
    load_json,
    load_mdp,
    policy_to_dict,
    save_json,
    surrogate_to_dict,
    write_csv,
    write_jsonl,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


ENV_KEYS = {
    "four_state": {"r_a", "r_b", "r_c"},
    "chain": {"n", "rewards", "horizon", "start"},
    "chain_fixture": set(),
    "puddle": {"layout", "layout_path"},
    "random": {"num_states", "num_actions", "horizon", "seed"},
    "mdp_file": {"path"},
}

DEFAULTS = {
    "solve": {"environment": {"name": "four_state"}, "gamma": 1.0},
    "gamma-crit": {"environment": {"name": "four_state"}, "grid_step": 0.01, "tolerance": 1e-9},
    "tweak": {
        "environment": {"name": "puddle"},
        "gammas": [0.3],
        "heatmap_gammas": [0.0, 0.5, 1.0],
        "loop": {},
    },
    "robustness": {"trials": 1000, "modes": list(robustness_lab.MODES), "epsilon_p": None},
    "theorems": {
        "gammas": [0.0, 0.3, 0.7, 1.0],
        "random_mdps": 25,
        "trajectories": 500,
        "theorem2_gammas": [0.5, 0.9, 1.0],
        "counterexample_samples": 1000,
        "scale_alphas": [1e-3, 1.0, 1e3],
        "wrong_sign_theorem1": False,
    },
}


def load_config(command: str, path: Optional[str]) -> dict:
    """Defaults for ``command`` overlaid with the file at ``path``."""
    config = json.loads(json.dumps(DEFAULTS[command]))
    if path is None:
        return config
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config not found", path=str(path))
    try:
        raw = load_json(p)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON", path=str(path), detail=str(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", path=str(path))
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("unsupported schema_version", got=raw.get("schema_version"), expected=SCHEMA_VERSION)
    unknown = sorted(set(raw) - set(config) - {"schema_version"})
    if unknown:
        raise ConfigError("unknown config keys", keys=unknown)
    config.update({k: v for k, v in raw.items() if k != "schema_version"})
    if "environment" in config:
        check_environment(config["environment"])
    if command == "tweak":
        allowed = set(adaptive_loop.LoopConfig.__dataclass_fields__) - {"gamma", "seed"}
        bad = sorted(set(config["loop"]) - allowed)
        if bad:
            raise ConfigError("unknown loop keys", keys=bad)
    if command == "robustness":
        bad = sorted(set(config["modes"]) - set(robustness_lab.MODES))
        if bad:
            raise ConfigError("unknown robustness modes", modes=bad)
    return config


def check_environment(env: Any) -> None:
    if not isinstance(env, dict) or env.get("name") not in ENV_KEYS:
        raise ConfigError("environment needs a name", choices=sorted(ENV_KEYS))
    unknown = sorted(set(env) - ENV_KEYS[env["name"]] - {"name"})
    if unknown:
        raise ConfigError("unknown environment keys", keys=unknown)


def build_environment(env: dict) -> tuple[FiniteHorizonMdp, Optional[PuddleLayout]]:
    """MDP for an environment block, plus the layout for puddle worlds."""
    name = env["name"]
    try:
        if name == "four_state":
            return make_four_state_mdp(env.get("r_a", 0.5), env.get("r_b", 0.0), env.get("r_c", 2.0)), None
        if name == "chain":
            return make_chain_mdp(int(env["n"]), env["rewards"], int(env["horizon"]), int(env.get("start", 0))), None
        if name == "chain_fixture":
            return make_chain_fixture(), None
        if name == "puddle":
            if "layout" in env:
                layout = layout_from_dict(env["layout"])
            elif "layout_path" in env:
                layout = layout_from_dict(load_json(env["layout_path"]))
            else:
                layout = canonical_puddle_layout()
            return make_puddle_world(layout), layout
        if name == "random":
            return make_random_mdp(
                int(env.get("num_states", 6)), int(env.get("num_actions", 2)),
                int(env.get("horizon", 8)), int(env.get("seed", 0))), None
        return load_mdp(env["path"]), None
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError("invalid environment", environment=name, detail=str(exc)) from None


def _fmt(g: float) -> str:
    return f"{float(g):g}"


def _action_name(mdp: FiniteHorizonMdp, a: int) -> str:
    return mdp.action_names[a] if mdp.action_names is not None else str(a)


def _start_state(mdp: FiniteHorizonMdp) -> int:
    return int(np.argmax(mdp.initial_dist))


# -- commands -------------------------------------------------------------------------


def cmd_solve(config: dict, out: Path, seed: int, jobs: int) -> tuple[int, dict]:
    mdp, _ = build_environment(config["environment"])
    gamma = float(config["gamma"])
    policy, values = solve_optimal(mdp, gamma)
    s0 = _start_state(mdp)
    write_csv(out / "values.csv", ["t", "state", "value"],
              ([t, s, float(values.values[t, s])] for t in range(mdp.horizon + 1) for s in range(mdp.num_states)))
    write_csv(out / "policy.csv", ["t", "state", "action", "action_name"],
              ([t, s, int(a), _action_name(mdp, a)]
               for t in range(mdp.horizon) for s, a in enumerate(policy.action_table[t])))
    save_json(policy_to_dict(policy), out / "policy.json")
    start_action = int(policy.action(0, s0))
    report = {
        "gamma": gamma,
        "total_return": total_return(mdp, policy),
        "optimal_total_return": optimal_total_return(mdp),
        "start_state": s0,
        "start_action": start_action,
        "start_action_name": _action_name(mdp, start_action),
        "discounted_value": values.initial(mdp),
    }
    save_json(report, out / "report.json")
    return EXIT_OK, report


def cmd_gamma_crit(config: dict, out: Path, seed: int, jobs: int) -> tuple[int, dict]:
    mdp, _ = build_environment(config["environment"])
    grid = default_gamma_grid(float(config["grid_step"]))
    gamma_crit = find_gamma_crit(mdp, grid, float(config["tolerance"]))
    rows = gamma_sweep(mdp, grid)
    write_csv(out / "sweep.csv", ["gamma", "total_return", "start_action", "is_gamma_crit"],
              ([r["gamma"], r["total_return"], r["start_action"], int(r["gamma"] == gamma_crit)] for r in rows))
    report = {"gamma_crit": gamma_crit, "optimal_total_return": optimal_total_return(mdp), "grid_points": len(rows)}
    save_json(report, out / "report.json")
    return EXIT_OK, report


def _tweak_one(args) -> tuple[float, list, list, dict, dict]:
    mdp, gamma, seed, loop = args
    config = adaptive_loop.LoopConfig(gamma=gamma, seed=seed, **loop)
    policy, model, log = adaptive_loop.run(mdp, config)
    _, base_log = adaptive_loop.run_baseline(mdp, gamma, config)
    return gamma, log.records, base_log.records, surrogate_to_dict(to_surrogate(model)), policy_to_dict(policy)


def _grid_rows(grid: np.ndarray):
    for r, row in enumerate(grid):
        yield [r] + [("" if np.isnan(v) else float(v)) for v in row]


def _export_heatmaps(mdp: FiniteHorizonMdp, layout: PuddleLayout, surrogate, tag: str, out: Path) -> None:
    header = ["row"] + [f"col{c}" for c in range(layout.width)]
    write_csv(out / f"heatmap_{tag}.csv", header, _grid_rows(exact_surrogate.minimal_time_slice(surrogate, layout)))
    write_csv(out / f"surrogate_table_{tag}.csv", ["state", "row", "col", "t", "value"],
              ([s, *layout.cell(s), t, float(surrogate.values[s, t])]
               for s in range(mdp.num_states) for t in range(mdp.horizon)))
    arrows = exact_surrogate.myopic_arrows(mdp, surrogate, layout)
    write_csv(out / f"arrows_{tag}.csv", ["row", "col", "action"],
              ([r, c, GRID_ACTIONS[a] if a >= 0 else ""]
               for r in range(layout.height) for c in range(layout.width) for a in [int(arrows[r, c])]))


def cmd_tweak(config: dict, out: Path, seed: int, jobs: int) -> tuple[int, dict]:
    mdp, layout = build_environment(config["environment"])
    try:
        adaptive_loop.LoopConfig(gamma=0.5, seed=seed, **config["loop"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid loop config", detail=str(exc)) from None
    tasks = [(mdp, float(g), seed, config["loop"]) for g in config["gammas"]]
    results = _map(_tweak_one, tasks, jobs)
    optimum = optimal_total_return(mdp)
    summary = []
    for gamma, records, base_records, surrogate, policy in results:
        tag = f"g{_fmt(gamma)}"
        write_jsonl(out / f"tweak_log_{tag}.jsonl", map(adaptive_loop.jsonable_record, records))
        write_jsonl(out / f"baseline_log_{tag}.jsonl", map(adaptive_loop.jsonable_record, base_records))
        write_csv(out / f"curves_{tag}.csv", ["iteration", "tweaked_return", "baseline_return"],
                  ([r["iteration"], r["total_return"], b["total_return"]] for r, b in zip(records, base_records)))
        save_json(surrogate, out / f"learned_surrogate_{tag}.json")
        save_json(policy, out / f"policy_{tag}.json")
        tweaked = records[-1]["total_return"] if records else _cold_start_return(mdp, gamma, seed, config["loop"])
        baseline = base_records[-1]["total_return"] if base_records else total_return(mdp, solve_optimal(mdp, gamma)[0])
        summary.append({"gamma": gamma, "tweaked_return": tweaked, "baseline_return": baseline,
                        "optimal_total_return": optimum, "iterations": len(records)})
        if layout is not None:
            _export_heatmaps(mdp, layout, SurrogateReward(np.array(surrogate["values"])), f"learned_{tag}", out)
    write_csv(out / "summary.csv", ["gamma", "tweaked_return", "baseline_return", "optimal_total_return", "iterations"],
              ([s["gamma"], s["tweaked_return"], s["baseline_return"], s["optimal_total_return"], s["iterations"]]
               for s in summary))
    if layout is not None:
        for g in config["heatmap_gammas"]:
            surrogate = exact_surrogate.build_theorem1_reward(mdp, 1.0, float(g))
            _export_heatmaps(mdp, layout, surrogate, f"g{_fmt(g)}", out)
    return EXIT_OK, {"runs": summary}


def _cold_start_return(mdp, gamma, seed, loop) -> float:
    policy, _, _ = adaptive_loop.run(mdp, adaptive_loop.LoopConfig(gamma=gamma, seed=seed, **{**loop, "iterations": 0}))
    return total_return(mdp, policy)


def _trial_chunk(args) -> list:
    mode, seqs, start, epsilon_p = args
    return [robustness_lab.run_trial(start + k, seq, mode, epsilon_p).to_dict() for k, seq in enumerate(seqs)]


def cmd_robustness(config: dict, out: Path, seed: int, jobs: int) -> tuple[int, dict]:
    n = int(config["trials"])
    eps = config["epsilon_p"]
    if eps is not None and not 0.0 <= float(eps) <= 2.0:
        raise ConfigError("epsilon_p must lie in [0, 2]", got=eps)
    summaries = {}
    for mode in config["modes"]:
        seqs = robustness_lab.trial_seeds(seed, n)
        chunk = max(1, -(-n // max(jobs, 1)))
        tasks = [(mode, seqs[i:i + chunk], i, eps) for i in range(0, n, chunk)]
        records = [r for part in _map(_trial_chunk, tasks, jobs) for r in part]
        write_jsonl(out / f"trials_{mode}.jsonl", records)
        summaries[mode] = robustness_lab.summarize([robustness_lab.TrialRecord(**r) for r in records])
    keys = ["trials", "violations", "uniform_violations", "mean_gap", "max_gap", "min_slack",
            "max_gap_to_bound", "mean_paired_uniform_gap"]
    write_csv(out / "summary.csv", ["mode"] + keys, ([m] + [s[k] for k in keys] for m, s in summaries.items()))
    failed = any(s["violations"] or s["uniform_violations"] for s in summaries.values())
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), summaries


def theorem_environments(random_mdps: int, seed: int) -> list[tuple[str, FiniteHorizonMdp]]:
    """The fixed test environments plus ``random_mdps`` random ones with at most 8 states."""
    envs = [
        ("four_state", make_four_state_mdp(0.5, 0.0, 2.0)),
        ("chain_fixture", make_chain_fixture()),
        ("puddle", make_puddle_world(canonical_puddle_layout())),
    ]
    rng = np.random.default_rng(seed)
    for k in range(random_mdps):
        S, A, T = int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 8))
        envs.append((f"random_{k}", make_random_mdp(S, A, T, int(rng.integers(2**31)))))
    return envs


def cmd_theorems(config: dict, out: Path, seed: int, jobs: int) -> tuple[int, dict]:
    rows = []

    def record(check: str, target: str, metric: str, value, passed: bool) -> None:
        rows.append([check, target, metric, value, "PASS" if passed else "FAIL"])

    sign = -1.0 if config["wrong_sign_theorem1"] else 1.0
    envs = theorem_environments(int(config["random_mdps"]), seed)
    for name, mdp in envs:
        worst = 0.0
        for g1 in config["gammas"]:
            for g2 in config["gammas"]:
                res = exact_surrogate.theorem1_check(mdp, float(g1), float(g2), sign)
                worst = max(worst, res.value_error, res.policy_error, res.reference_policy_gap)
        record("theorem1", name, "max_error", worst, worst <= 1e-9)

    four = envs[0][1]
    surrogate = exact_surrogate.build_theorem1_reward(four, 1.0, 0.2, sign)
    action = int(solve_optimal(four, 0.2, surrogate)[0].action(0, 0))
    record("theorem1_fixes_start_action", "four_state", "action_at_gamma_0.2", _action_name(four, action), action == 1)

    rng = np.random.default_rng(seed)
    for name, mdp in envs[:3]:
        trajs = [sample_trajectory(mdp, None, 1.0, rng) for _ in range(int(config["trajectories"]))]
        for g in config["theorem2_gammas"]:
            sur = exact_surrogate.build_theorem2_reward(mdp, float(g))
            err = max(abs(exact_surrogate.discounted_surrogate_return(t, sur, float(g)) - t.total_return)
                      for t in trajs)
            record("theorem2_identity", name, f"max_abs_error_gamma_{_fmt(g)}", err, err <= 1e-9)
            report = exact_surrogate.verify_order_preservation(mdp, sur, float(g), trajs)
            record("theorem2_order", name, f"violations_gamma_{_fmt(g)}", len(report.violations), report.holds)

    inst = exact_surrogate.gamma_zero_counterexample()
    gaps = [exact_surrogate.gamma_zero_gap(inst, r)
            for r in exact_surrogate.sample_rewards_for_counterexample(rng, int(config["counterexample_samples"]))]
    record("gamma_zero_counterexample", "random_rewards", "max_abs_U1_minus_U2", max(map(abs, gaps)),
           all(g == 0.0 for g in gaps))
    fn = lambda s, k: inst.rewards[s]  # noqa: E731
    u1, u2 = inst.utility(0, fn, 0.0), inst.utility(1, fn, 0.0)
    record("gamma_zero_counterexample", "original_rewards", "U1", u1, u1 == u2)
    record("gamma_zero_counterexample", "original_rewards", "U2", u2, u1 == u2)
    record("gamma_zero_ordering_restored", "theorem2_gamma_0.5", "strict_order", 1,
           exact_surrogate.ordering_restored(inst, 0.5))

    for name, mdp in [envs[0]] + envs[3:]:
        sur = exact_surrogate.build_theorem1_reward(mdp, 1.0, 0.3)
        ok = all(exact_surrogate.check_scale_invariance(mdp, sur, 0.3, float(a)) for a in config["scale_alphas"])
        record("scale_invariance", name, "alphas", len(config["scale_alphas"]), ok)

    write_csv(out / "theorems.csv", ["check", "target", "metric", "value", "result"], rows)
    failures = [r for r in rows if r[-1] == "FAIL"]
    report = {"checks": len(rows), "failures": len(failures),
              "failed": [f"{r[0]}:{r[1]}" for r in failures], "U1": u1, "U2": u2}
    save_json(report, out / "report.json")
    return (EXIT_CHECK_FAILED if failures else EXIT_OK), report


COMMANDS: dict[str, Callable] = {
    "solve": cmd_solve,
    "gamma-crit": cmd_gamma_crit,
    "tweak": cmd_tweak,
    "robustness": cmd_robustness,
    "theorems": cmd_theorems,
}


def _map(fn: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def code_version() -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    h = hashlib.blake2b(digest_size=8)
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return {"package_version": version, "source_hash": h.hexdigest()}


def write_manifest(out: Path, command: str, config: dict, seed: int) -> None:
    artifacts = {}
    for path in sorted(out.iterdir()):
        if path.is_file() and path.name != "manifest.json":
            artifacts[path.name] = hashlib.blake2b(path.read_bytes(), digest_size=8).hexdigest()
    save_json({"command": command, "config": {"schema_version": SCHEMA_VERSION, **config}, "seed": seed,
               "code_version": code_version(), "artifacts": artifacts}, out / "manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reward-tweak", description="Tabular reward-tweaking experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults used when omitted)")
        p.add_argument("--out", default=f"runs/{name}", help="artifact directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)
    return parser


def _error(message: str, **details) -> None:
    print(json.dumps({"error": message, **details}, default=str), file=sys.stderr)


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2**64:
        _error("seed must be an unsigned 64-bit integer", got=args.seed)
        return EXIT_USAGE
    if args.jobs < 1:
        _error("jobs must be at least 1", got=args.jobs)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        config = load_config(args.command, args.config)
        out.mkdir(parents=True, exist_ok=True)
        code, report = COMMANDS[args.command](config, out, args.seed, args.jobs)
    except ConfigError as exc:
        _error(str(exc), **exc.details)
        return EXIT_USAGE
    write_manifest(out, args.command, config, args.seed)
    print(json.dumps(report, sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
