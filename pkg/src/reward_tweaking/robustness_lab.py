"""Empirical checks of simulation-lemma value bounds under kernel perturbations.

For a kernel estimate whose rows are within L1 distance ``eps`` of the truth,
the value error at the start states is compared with

    uniform:            gamma (1 - gamma**T) R / (2 (1 - gamma)**2) * eps
    end-concentrated:   gamma**(T - L) * gamma (1 - gamma**L) R / (2 (1 - gamma)**2) * eps

where ``R`` is the width of the (surrogate) reward range widened to include
zero, see :func:`r_max`. In the second
case, only rows of states first reachable in the last ``L`` steps are
perturbed.

Trial seeds are derived from a root seed with ``numpy.random.SeedSequence(root).spawn(n)``:
trial ``k`` uses the ``k``-th child, independent of how trials are scheduled.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, Optional

import numpy as np

from .environments import make_layered_mdp, make_random_mdp
from .mdp_core import (
    FiniteHorizonMdp,
    NonStationaryPolicy,
    SurrogateReward,
    evaluate_policy,
    reachable_mask,
    reward_table,
)

MODES = ("uniform_all_states", "end_concentrated")
GAMMAS = (0.5, 0.9, 0.99)


class NotFactorizableError(ValueError):
    """The late-horizon states are also reachable early, so no clean split exists."""


@dataclass(frozen=True)
class PerturbationSpec:
    epsilon_p: float
    mode: str = "uniform_all_states"
    L: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_p <= 2.0:
            raise ValueError("epsilon_p must lie in [0, 2]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "end_concentrated" and (self.L is None or self.L < 1):
            raise ValueError("end_concentrated mode needs L >= 1")


def uncertainty_region(mdp: FiniteHorizonMdp, L: int) -> np.ndarray:
    """States reachable during the last ``L`` steps, checked to be unreachable before.

    Raises:
        NotFactorizableError: if such a state can also be visited before ``T - L``.
    """
    T = mdp.horizon
    if not 1 <= L <= T:
        raise ValueError(f"L must lie in [1, {T}]")
    reach = reachable_mask(mdp)
    late = reach[T - L :].any(axis=0)
    early = reach[: T - L].any(axis=0)
    clash = np.flatnonzero(late & early)
    if clash.size:
        raise NotFactorizableError(
            f"states {clash.tolist()} are reachable both before and after time {T - L}"
        )
    return late


def _perturb_row(row: np.ndarray, budget: float, rng: np.random.Generator) -> np.ndarray:
    """Move up to ``budget / 2`` probability mass from random donors to one target."""
    n = row.size
    if n < 2 or budget <= 0.0:
        return row
    target = int(rng.integers(n))
    others = np.flatnonzero((np.arange(n) != target) & (row > 0))
    if others.size == 0:
        return row
    donors = rng.choice(others, size=int(rng.integers(1, others.size + 1)), replace=False)
    available = row[donors].sum()
    # stay strictly inside the budget so renormalization rounding cannot exceed it
    delta = min(0.5 * budget * (1.0 - 1e-9), available)
    new = row.copy()
    new[donors] -= delta * row[donors] / available
    new[donors] = np.maximum(new[donors], 0.0)
    new[target] += delta
    new /= new.sum()
    # budgets below float resolution: rounding alone would overshoot, keep the row exact
    if np.abs(new - row).sum() > budget:
        return row
    return new


def perturb_kernel(mdp: FiniteHorizonMdp, spec: PerturbationSpec) -> FiniteHorizonMdp:
    """Kernel estimate within L1 distance ``spec.epsilon_p`` of the truth, row by row.

    Absorbing rows stay exact. In end-concentrated mode, rows outside the
    uncertainty region are copied bit for bit.
    """
    if spec.epsilon_p == 0.0:
        return mdp.with_transition(mdp.transition.copy())
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "end_concentrated":
        region = uncertainty_region(mdp, spec.L)
    else:
        region = np.ones(mdp.num_states, dtype=bool)
    P = mdp.transition.copy()
    for s in range(mdp.num_states):
        if not region[s] or mdp.absorbing[s]:
            continue
        for a in range(mdp.num_actions):
            P[s, a] = _perturb_row(P[s, a], spec.epsilon_p, rng)
    return mdp.with_transition(P)


def max_row_l1(P: np.ndarray, Q: np.ndarray) -> float:
    return float(np.abs(P - Q).sum(axis=2).max())


def simulation_gap(
    mdp: FiniteHorizonMdp,
    perturbed: FiniteHorizonMdp,
    policy: NonStationaryPolicy,
    gamma: float,
    surrogate: Optional[SurrogateReward] = None,
) -> float:
    """Largest start-time value difference over the support of the start distribution."""
    if perturbed.transition.shape != mdp.transition.shape or perturbed.horizon != mdp.horizon:
        raise ValueError("perturbed MDP dimensions differ")
    v = evaluate_policy(mdp, policy, gamma, surrogate).values[0]
    v_hat = evaluate_policy(perturbed, policy, gamma, surrogate).values[0]
    support = mdp.initial_dist > 0
    return float(np.max(np.abs(v_hat - v)[support]))


def uniform_bound(gamma: float, T: int, r_max: float, epsilon_p: float) -> float:
    if gamma == 1.0:
        raise ValueError("bound undefined at γ=1")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return gamma * (1.0 - gamma ** T) * r_max / (2.0 * (1.0 - gamma) ** 2) * epsilon_p


def end_concentrated_bound(gamma: float, T: int, L: int, r_max: float, epsilon_p: float) -> float:
    if not 1 <= L <= T:
        raise ValueError("L must lie in [1, T]")
    return gamma ** (T - L) * uniform_bound(gamma, L, r_max, epsilon_p)


@dataclass
class BoundCheck:
    holds: bool
    bound: float
    slack: float


def check_bound(
    gap: float,
    gamma: float,
    T: int,
    r_max_tilde: float,
    epsilon_p: float,
    L: Optional[int] = None,
) -> BoundCheck:
    """Compare a measured gap with the uniform bound, or the end-concentrated one when ``L`` is given."""
    bound = uniform_bound(gamma, T, r_max_tilde, epsilon_p) if L is None else end_concentrated_bound(
        gamma, T, L, r_max_tilde, epsilon_p)
    return BoundCheck(bool(gap <= bound), bound, bound - gap)


def r_max(mdp: FiniteHorizonMdp, surrogate: Optional[SurrogateReward] = None) -> float:
    """``max(r, 0) - min(r, 0)`` over the reward table.

    Equals the largest reward when rewards are nonnegative. With signed
    rewards, ``max |r|`` alone can undercut the span the bound relies on.
    """
    R = np.asarray(reward_table(mdp, surrogate))
    return float(max(R.max(), 0.0) - min(R.min(), 0.0))


@dataclass
class TrialRecord:
    trial: int
    gamma: float
    epsilon_p: float
    mode: str
    gap: float
    bound: float
    slack: float
    holds: bool
    T: int
    L: Optional[int]
    uniform_bound: float
    holds_uniform: bool
    # end-concentrated trials only: same MDP, policy and budget, every row perturbed
    paired_uniform_gap: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def trial_seeds(root_seed: int, n: int) -> list:
    return np.random.SeedSequence(root_seed).spawn(n)


def run_trial(trial: int, seed_seq: np.random.SeedSequence, mode: str, epsilon_p: Optional[float] = None) -> TrialRecord:
    """One random (MDP, policy, perturbation, gamma) draw."""
    rng = np.random.default_rng(seed_seq)
    gamma = float(rng.choice(GAMMAS))
    eps = float(rng.uniform(0.0, 1.0)) if epsilon_p is None else float(epsilon_p)
    mdp_seed = int(rng.integers(2**31))
    if mode == "uniform_all_states":
        mdp = make_random_mdp(
            int(rng.integers(2, 9)), int(rng.integers(1, 4)), int(rng.integers(2, 11)), mdp_seed
        )
        L = None
    else:
        T = int(rng.integers(2, 9))
        layers = [int(x) for x in rng.integers(1, 4, size=T + 1)]
        mdp = make_layered_mdp(layers, int(rng.integers(1, 4)), mdp_seed)
        L = int(rng.integers(1, T + 1))
    policy = NonStationaryPolicy(rng.integers(mdp.num_actions, size=(mdp.horizon, mdp.num_states)))
    spec = PerturbationSpec(eps, mode, L, int(rng.integers(2**31)))
    perturbed = perturb_kernel(mdp, spec)
    gap = simulation_gap(mdp, perturbed, policy, gamma)
    rmax = r_max(mdp)
    check = check_bound(gap, gamma, mdp.horizon, rmax, eps, L)
    uni = check_bound(gap, gamma, mdp.horizon, rmax, eps)
    paired = None
    if L is not None:
        uniform = perturb_kernel(mdp, PerturbationSpec(eps, "uniform_all_states", None, spec.seed))
        paired = simulation_gap(mdp, uniform, policy, gamma)
    return TrialRecord(trial, gamma, eps, mode, gap, check.bound, check.slack, check.holds,
                       mdp.horizon, L, uni.bound, uni.holds, paired)


def run_trials(n: int, mode: str, root_seed: int = 0, epsilon_p: Optional[float] = None) -> Iterator[TrialRecord]:
    for k, seq in enumerate(trial_seeds(root_seed, n)):
        yield run_trial(k, seq, mode, epsilon_p)


def summarize(records: list) -> dict:
    gaps = np.array([r.gap for r in records])
    paired = [r.paired_uniform_gap for r in records if r.paired_uniform_gap is not None]
    return {
        "trials": len(records),
        "violations": int(sum(not r.holds for r in records)),
        "uniform_violations": int(sum(not r.holds_uniform for r in records)),
        "mean_gap": float(gaps.mean()) if gaps.size else float("nan"),
        "max_gap": float(gaps.max()) if gaps.size else float("nan"),
        "min_slack": float(min(r.slack for r in records)) if records else float("nan"),
        "max_gap_to_bound": float(max((r.gap / r.bound) if r.bound > 0 else 0.0 for r in records))
        if records else float("nan"),
        "mean_paired_uniform_gap": float(np.mean(paired)) if paired else None,
    }
