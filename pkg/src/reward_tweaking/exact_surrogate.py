"""Closed-form surrogate rewards and executable checks of their properties.

Two constructions are provided:

* :func:`build_theorem1_reward` adds a fixed, policy-independent correction
  ``(g_src - g_tgt) * E[v*_{t+1}(s') | s, pi*(t, s)]`` to the reward, where
  ``pi*`` and ``v*`` solve the ``g_src``-discounted problem. Planning with
  discount ``g_tgt`` on the corrected reward reproduces the ``g_src`` optimal
  value table.
* :func:`build_theorem2_reward` rescales the reward by ``gamma ** -t`` so that
  the discounted surrogate return of any trajectory equals its undiscounted
  return.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .environments import PuddleLayout, grid_distances
from .mdp_core import (
    FiniteHorizonMdp,
    NonStationaryPolicy,
    SurrogateReward,
    Trajectory,
    ValueTable,
    evaluate_policy,
    greedy_actions,
    reachable_mask,
    solve_optimal,
)

# smallest gamma ** (T - 1) for which the rescaled reward is representable
RESCALE_FLOOR = 1e-300
TIE_TOLERANCE = 1e-9


def build_theorem1_reward(
    mdp: FiniteHorizonMdp,
    gamma_source: float,
    gamma_target: float,
    correction_sign: float = 1.0,
) -> SurrogateReward:
    """Surrogate whose ``gamma_target`` solution recovers the ``gamma_source`` optimum.

    Args:
        mdp: the task; its state reward is the reward being corrected.
        gamma_source: discount whose optimal behaviour should be recovered
            (1.0 for the total-return objective).
        gamma_target: discount the agent will actually plan with.
        correction_sign: multiplies the correction term. Anything other than
            1.0 breaks the construction and exists only for negative controls.

    Returns:
        ``r~(s, t) = r(s) + (gamma_source - gamma_target) * sum_s' P(s'|s, pi*(t,s)) v*_{t+1}(s')``.
    """
    for g in (gamma_source, gamma_target):
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {g}")
    policy, values = source_optimum(mdp, gamma_source)
    T, S = mdp.horizon, mdp.num_states
    rows = np.arange(S)
    table = np.empty((S, T))
    for t in range(T):
        expected_next = mdp.transition[rows, policy.action_table[t]] @ values.values[t + 1]
        table[:, t] = mdp.reward + correction_sign * (gamma_source - gamma_target) * expected_next
    return SurrogateReward(table)


def source_optimum(mdp: FiniteHorizonMdp, gamma: float) -> tuple[NonStationaryPolicy, ValueTable]:
    """Optimal ``gamma`` values with actions maximizing ``sum_s' P(s'|s,a) v*_{t+1}(s')``.

    For ``gamma > 0`` this is the usual optimal policy. At ``gamma = 0`` every
    action is optimal and the lookahead picks the one that is best for the
    future, which the corrected reward needs.
    """
    _, values = solve_optimal(mdp, gamma)
    table = np.stack([greedy_actions(mdp.transition @ values.values[t + 1]) for t in range(mdp.horizon)])
    return NonStationaryPolicy(table), values


def build_theorem2_reward(mdp: FiniteHorizonMdp, gamma: float) -> SurrogateReward:
    """``r~(s, t) = r(s) / gamma ** t``.

    Raises:
        ValueError: for ``gamma == 0`` (no surrogate can preserve the ordering
            there; see :func:`gamma_zero_counterexample`) and when
            ``gamma ** (T - 1)`` falls below :data:`RESCALE_FLOOR`.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(
            "the time-rescaled surrogate needs gamma in (0, 1]; at gamma = 0 the myopic "
            "utility cannot separate trajectories sharing a first step"
        )
    exponents = np.arange(mdp.horizon)
    if gamma ** (mdp.horizon - 1) < RESCALE_FLOOR:
        raise ValueError(
            f"gamma={gamma} with horizon {mdp.horizon} overflows the rescaled reward; "
            f"need gamma**(T-1) >= {RESCALE_FLOOR}"
        )
    return SurrogateReward(mdp.reward[:, None] / gamma ** exponents[None, :])


def discounted_surrogate_return(
    traj: Trajectory,
    surrogate: SurrogateReward,
    gamma: float,
    time_index: str = "relative",
) -> float:
    """``sum_k gamma**k r~(s_k, tau_k)`` over the reward-bearing steps of ``traj``.

    With ``time_index="relative"`` the surrogate is read at ``tau_k = k``, i.e. the
    view is scored as if it were an episode started at time 0. ``"absolute"``
    uses ``tau_k = traj.start_time + k``.
    """
    n = len(traj)
    offset = 0 if time_index == "relative" else traj.start_time
    if time_index not in ("relative", "absolute"):
        raise ValueError(f"unknown time_index {time_index!r}")
    times = offset + np.arange(n)
    if n and times[-1] >= surrogate.horizon:
        raise IndexError("trajectory runs past the surrogate's horizon")
    vals = surrogate.values[traj.states[:n], times]
    return float(np.sum(gamma ** np.arange(n) * vals))


@dataclass
class OrderReport:
    violations: list
    checked_pairs: int

    @property
    def holds(self) -> bool:
        return not self.violations


def verify_order_preservation(
    mdp: FiniteHorizonMdp,
    surrogate: SurrogateReward,
    gamma: float,
    trajectories: Sequence[Trajectory],
    tolerance: float = TIE_TOLERANCE,
    time_index: str = "relative",
) -> OrderReport:
    """Find pairs whose surrogate score does not strictly follow their return.

    A pair ``(i, j)`` with ``return_i >= return_j + tolerance`` is a violation
    when ``score_i <= score_j``. Pairs closer than ``tolerance`` are ties and are
    skipped. Each trajectory's ``start_time`` delimits the steps that count.
    """
    surrogate.check(mdp)
    returns = np.array([t.total_return for t in trajectories])
    scores = np.array([discounted_surrogate_return(t, surrogate, gamma, time_index) for t in trajectories])
    violations = []
    checked = 0
    for i, j in combinations(range(len(trajectories)), 2):
        if abs(returns[i] - returns[j]) < tolerance:
            continue
        hi, lo = (i, j) if returns[i] > returns[j] else (j, i)
        checked += 1
        if not scores[hi] > scores[lo]:
            violations.append((hi, lo))
    return OrderReport(violations, checked)


@dataclass(frozen=True)
class GammaZeroInstance:
    """Three trajectories sharing a start state A; rewards on B..E.

    ``trajectories`` list state names from the shared start. ``expected_ordering``
    ranks trajectory indices from best to worst by undiscounted return.
    """

    states: tuple
    trajectories: tuple
    rewards: dict
    expected_ordering: tuple

    def state_index(self, name: str) -> int:
        return self.states.index(name)

    def returns(self) -> list:
        return [sum(self.rewards[s] for s in traj[1:]) for traj in self.trajectories]

    def utility(self, traj_index: int, surrogate: Callable[[str, int], float], gamma: float) -> float:
        """Discounted surrogate utility over the states after the shared start.

        ``surrogate(state_name, k)`` gives the reward at the ``k``-th state after
        the start (``k = 0`` for the first one).
        """
        path = self.trajectories[traj_index][1:]
        total = 0.0
        for k, name in enumerate(path):
            total += gamma ** k * surrogate(name, k)
        return total


def gamma_zero_counterexample() -> GammaZeroInstance:
    """Instance where no state-based surrogate preserves the return ordering at gamma = 0."""
    return GammaZeroInstance(
        states=("A", "B", "C", "D", "E"),
        trajectories=(("A", "B", "C"), ("A", "B", "D"), ("A", "E")),
        rewards={"A": 0.0, "B": 0.0, "C": 2.0, "D": -1.0, "E": 1.0},
        expected_ordering=(0, 2, 1),
    )


def gamma_zero_gap(instance: GammaZeroInstance, state_reward: Sequence[float]) -> float:
    """``U(tau_1) - U(tau_2)`` at gamma = 0 for a state-based surrogate over A..E."""
    table = dict(zip(instance.states, state_reward))
    fn = lambda name, k: table[name]  # noqa: E731
    return instance.utility(0, fn, 0.0) - instance.utility(1, fn, 0.0)


def ordering_restored(instance: GammaZeroInstance, gamma: float) -> bool:
    """Whether the time-rescaled surrogate reproduces the strict return ordering."""
    fn = lambda name, k: instance.rewards[name] / gamma ** k  # noqa: E731
    u = [instance.utility(i, fn, gamma) for i in range(len(instance.trajectories))]
    a, b, c = instance.expected_ordering
    return u[a] > u[b] > u[c]


def check_scale_invariance(
    mdp: FiniteHorizonMdp,
    surrogate: SurrogateReward,
    gamma: float,
    alpha: float,
) -> bool:
    """True iff scaling the surrogate by ``alpha > 0`` leaves the greedy policy unchanged."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    base, _ = solve_optimal(mdp, gamma, surrogate)
    scaled, _ = solve_optimal(mdp, gamma, surrogate.scaled(alpha))
    return base == scaled


@dataclass
class Theorem1Result:
    gamma_source: float
    gamma_target: float
    value_error: float
    policy_error: float
    reference_policy_gap: float

    def passed(self, tol: float = 1e-9) -> bool:
        return self.value_error <= tol and self.policy_error <= tol and self.reference_policy_gap <= tol


def theorem1_check(
    mdp: FiniteHorizonMdp,
    gamma_source: float,
    gamma_target: float,
    correction_sign: float = 1.0,
) -> Theorem1Result:
    """Measure how well the corrected reward recovers the ``gamma_source`` optimum.

    Errors are max absolute differences over ``(t, s)`` reachable from the
    start distribution:

    * ``value_error``: optimal ``gamma_target`` surrogate values versus the
      optimal ``gamma_source`` values.
    * ``policy_error``: the ``gamma_target``-greedy policy, evaluated on the
      original reward at ``gamma_source``, versus the optimum. At
      ``gamma_target = 0`` a state-based surrogate cannot influence the action
      choice, so every policy is greedy and the error is reported as 0.
    * ``reference_policy_gap``: the ``gamma_source``-optimal policy's surrogate
      value at ``gamma_target`` versus the surrogate optimum, i.e. whether that
      policy is among the ``gamma_target`` maximizers.
    """
    surrogate = build_theorem1_reward(mdp, gamma_source, gamma_target, correction_sign)
    ref_policy, ref_values = source_optimum(mdp, gamma_source)
    policy, tweaked = solve_optimal(mdp, gamma_target, surrogate)
    mask = reachable_mask(mdp)[:-1]
    v_star = ref_values.values[:-1]
    value_error = float(np.max(np.abs(tweaked.values[:-1] - v_star)[mask]))
    if gamma_target > 0.0:
        achieved = evaluate_policy(mdp, policy, gamma_source).values[:-1]
        policy_error = float(np.max(np.abs(achieved - v_star)[mask]))
    else:
        policy_error = 0.0
    ref_surrogate = evaluate_policy(mdp, ref_policy, gamma_target, surrogate).values[:-1]
    reference_gap = float(np.max(np.abs(ref_surrogate - tweaked.values[:-1])[mask]))
    return Theorem1Result(gamma_source, gamma_target, value_error, policy_error, reference_gap)


def myopic_policy(mdp: FiniteHorizonMdp, surrogate: SurrogateReward) -> NonStationaryPolicy:
    """Act toward the best expected next-step surrogate reward.

    At ``(t, s)`` picks ``argmax_a sum_s' P(s'|s,a) r~(s', t + 1)``; the last step
    has nothing ahead and falls back to action 0.
    """
    surrogate.check(mdp)
    T, S = mdp.horizon, mdp.num_states
    table = np.zeros((T, S), dtype=np.int64)
    for t in range(T - 1):
        table[t] = greedy_actions(mdp.transition @ surrogate.values[:, t + 1])
    return NonStationaryPolicy(table)


def minimal_time_slice(surrogate: SurrogateReward, layout: PuddleLayout) -> np.ndarray:
    """Heatmap grid ``r~(s, d(s, start))`` with ``d`` the grid step distance.

    Cells whose distance is at least the horizon are NaN.
    """
    dist = grid_distances(layout)
    grid = np.full((layout.height, layout.width), np.nan)
    for r in range(layout.height):
        for c in range(layout.width):
            d = dist[r, c]
            if 0 <= d < surrogate.horizon:
                grid[r, c] = surrogate.values[layout.state((r, c)), d]
    return grid


def myopic_arrows(mdp: FiniteHorizonMdp, surrogate: SurrogateReward, layout: PuddleLayout) -> np.ndarray:
    """Myopic action per cell at its minimal reaching time, shape ``(H, W)``; -1 where undefined."""
    policy = myopic_policy(mdp, surrogate)
    dist = grid_distances(layout)
    arrows = np.full((layout.height, layout.width), -1, dtype=np.int64)
    for r in range(layout.height):
        for c in range(layout.width):
            d = dist[r, c]
            if c != layout.goal_column and 0 <= d < mdp.horizon - 1:
                arrows[r, c] = policy.action(d, layout.state((r, c)))
    return arrows


def sample_rewards_for_counterexample(rng: np.random.Generator, n: int, scale: float = 10.0) -> np.ndarray:
    """``n`` random state-reward vectors over the five counterexample states."""
    return rng.normal(scale=scale, size=(n, 5))
