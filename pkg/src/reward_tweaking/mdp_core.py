"""Finite-horizon tabular MDPs and exact backward-induction solvers.

Conventions used throughout the package:

* Rewards are state based. The reward of the state visited at time ``t`` is
  collected for ``t = 0 .. T-1``; the state reached at time ``T`` is terminal
  and pays nothing. A horizon-``T`` episode therefore has ``T`` decisions and
  ``T`` reward terms.
* Value tables have shape ``(T + 1, S)`` with ``values[T] == 0``.
* Policies are deterministic and non-stationary: ``action_table[t, s]``.
* A surrogate reward replaces ``r(s)`` with a time-indexed table
  ``r~(s, t)`` of shape ``(S, T)``.
* Argmax ties go to the lowest action index.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

ROW_SUM_ATOL = 1e-12
# relative tolerance under which two Q-values count as tied
TIE_RTOL = 1e-12

SeedLike = Union[int, np.random.Generator, None]


class DimensionError(ValueError):
    """Shape mismatch between an MDP and an object used with it.

    Attributes:
        axis: name of the offending axis (``"states"``, ``"actions"``,
            ``"horizon"``, ...).
    """

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch on axis '{axis}': expected {expected}, got {got}")


class InvalidMdpError(ValueError):
    """An MDP violates one of its structural invariants."""


@dataclass(frozen=True, eq=False)
class FiniteHorizonMdp:
    """Tabular MDP with state reward and a fixed horizon.

    Attributes:
        transition: ``(S, A, S)`` kernel, ``transition[s, a, s']``.
        reward: ``(S,)`` state reward.
        horizon: number of decision steps ``T``.
        initial_dist: ``(S,)`` start distribution.
        absorbing: ``(S,)`` bool flags; absorbing states self-loop under every action.
        state_names: optional labels, purely cosmetic.
        action_names: optional labels, purely cosmetic.
    """

    transition: np.ndarray
    reward: np.ndarray
    horizon: int
    initial_dist: np.ndarray
    absorbing: Optional[np.ndarray] = None
    state_names: Optional[Sequence[str]] = None
    action_names: Optional[Sequence[str]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        mu = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise DimensionError("transition", "(S, A, S)", P.shape)
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise InvalidMdpError("need at least one state and one action")
        if r.shape != (S,):
            raise DimensionError("states", S, r.shape)
        if mu.shape != (S,):
            raise DimensionError("states", S, mu.shape)
        absorbing = (
            np.zeros(S, dtype=bool) if self.absorbing is None else np.array(self.absorbing, dtype=bool)
        )
        if absorbing.shape != (S,):
            raise DimensionError("states", S, absorbing.shape)
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidMdpError(f"horizon must be a positive integer, got {self.horizon}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise InvalidMdpError("transition entries must be finite and nonnegative")
        bad = np.abs(P.sum(axis=2) - 1.0) > ROW_SUM_ATOL
        if np.any(bad):
            s, a = np.argwhere(bad)[0]
            raise InvalidMdpError(f"transition row ({s}, {a}) sums to {P[s, a].sum()!r}")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_ATOL:
            raise InvalidMdpError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise InvalidMdpError("reward entries must be finite")
        for s in np.flatnonzero(absorbing):
            if not np.all(P[s, :, s] == 1.0):
                raise InvalidMdpError(f"absorbing state {s} does not self-loop under every action")
        for name, labels, n in (("states", self.state_names, S), ("actions", self.action_names, A)):
            if labels is not None and len(labels) != n:
                raise DimensionError(name, n, len(labels))
        for arr in (P, r, mu, absorbing):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "absorbing", absorbing)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def with_transition(self, transition: np.ndarray) -> "FiniteHorizonMdp":
        """Copy of this MDP with another kernel (used by kernel perturbation)."""
        return FiniteHorizonMdp(
            transition=transition,
            reward=self.reward,
            horizon=self.horizon,
            initial_dist=self.initial_dist,
            absorbing=self.absorbing,
            state_names=self.state_names,
            action_names=self.action_names,
            meta=dict(self.meta),
        )

    def with_reward(self, reward: np.ndarray) -> "FiniteHorizonMdp":
        return FiniteHorizonMdp(
            transition=self.transition,
            reward=reward,
            horizon=self.horizon,
            initial_dist=self.initial_dist,
            absorbing=self.absorbing,
            state_names=self.state_names,
            action_names=self.action_names,
            meta=dict(self.meta),
        )


@dataclass(frozen=True, eq=False)
class NonStationaryPolicy:
    """Deterministic policy, ``action_table[t, s]`` for ``t < T``."""

    action_table: np.ndarray

    def __post_init__(self):
        table = np.array(self.action_table, dtype=np.int64)
        if table.ndim != 2:
            raise DimensionError("policy", "(T, S)", table.shape)
        table.setflags(write=False)
        object.__setattr__(self, "action_table", table)

    @property
    def horizon(self) -> int:
        return self.action_table.shape[0]

    def action(self, t: int, s: int) -> int:
        return int(self.action_table[t, s])

    def check(self, mdp: FiniteHorizonMdp) -> None:
        if self.action_table.shape[0] != mdp.horizon:
            raise DimensionError("horizon", mdp.horizon, self.action_table.shape[0])
        if self.action_table.shape[1] != mdp.num_states:
            raise DimensionError("states", mdp.num_states, self.action_table.shape[1])
        if self.action_table.size and (
            self.action_table.min() < 0 or self.action_table.max() >= mdp.num_actions
        ):
            raise DimensionError("actions", f"[0, {mdp.num_actions})", (
                int(self.action_table.min()), int(self.action_table.max())))

    def __eq__(self, other):
        if not isinstance(other, NonStationaryPolicy):
            return NotImplemented
        return np.array_equal(self.action_table, other.action_table)

    @classmethod
    def constant(cls, mdp: FiniteHorizonMdp, action: int) -> "NonStationaryPolicy":
        return cls(np.full((mdp.horizon, mdp.num_states), action, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Return-to-go, ``values[t, s]`` for ``t = 0 .. T`` (last row zero)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("values", "(T+1, S)", v.shape)
        if np.any(v[-1] != 0.0):
            raise InvalidMdpError("terminal row of a value table must be zero")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def initial(self, mdp: FiniteHorizonMdp) -> float:
        """Expected value at ``t = 0`` under the start distribution."""
        return float(mdp.initial_dist @ self.values[0])


@dataclass(frozen=True, eq=False)
class SurrogateReward:
    """Time-indexed reward table ``values[s, t]``, shape ``(S, T)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionError("surrogate", "(S, T)", v.shape)
        if not np.all(np.isfinite(v)):
            raise InvalidMdpError("surrogate reward entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_states(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def check(self, mdp: FiniteHorizonMdp) -> None:
        if self.num_states != mdp.num_states:
            raise DimensionError("states", mdp.num_states, self.num_states)
        if self.horizon != mdp.horizon:
            raise DimensionError("horizon", mdp.horizon, self.horizon)

    def scaled(self, alpha: float) -> "SurrogateReward":
        return SurrogateReward(alpha * self.values)

    @classmethod
    def from_state_reward(cls, reward: np.ndarray, horizon: int) -> "SurrogateReward":
        return cls(np.repeat(np.asarray(reward, dtype=float)[:, None], horizon, axis=1))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A realized rollout, possibly a view starting at ``start_time``.

    ``states`` has one more entry than ``actions``. ``rewards[k]`` is the
    reward collected in ``states[k]``; the final state pays nothing, so
    ``len(rewards) == len(actions)``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    start_time: int = 0

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64)
        actions = np.array(self.actions, dtype=np.int64)
        rewards = np.array(self.rewards, dtype=float)
        if states.ndim != 1 or states.size < 1:
            raise DimensionError("states", "non-empty 1-d", states.shape)
        if actions.shape != (states.size - 1,):
            raise DimensionError("actions", states.size - 1, actions.shape)
        if rewards.shape != actions.shape:
            raise DimensionError("rewards", actions.size, rewards.shape)
        if self.start_time < 0:
            raise ValueError("start_time must be nonnegative")
        for arr in (states, actions, rewards):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)

    def __len__(self) -> int:
        """Number of reward-bearing steps."""
        return self.actions.size

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())

    def sub(self, n: int, length: Optional[int] = None) -> "Trajectory":
        """View from step ``n`` on, optionally capped at ``length`` steps."""
        if not 0 <= n < max(len(self), 1):
            raise IndexError(f"sub-trajectory start {n} outside [0, {len(self)})")
        end = len(self) if length is None else min(len(self), n + length)
        return Trajectory(
            self.states[n : end + 1],
            self.actions[n:end],
            self.rewards[n:end],
            start_time=self.start_time + n,
        )

    def check(self, mdp: FiniteHorizonMdp) -> None:
        if self.start_time + self.states.size > mdp.horizon + 1:
            raise DimensionError("horizon", mdp.horizon + 1, self.start_time + self.states.size)


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {gamma}")
    return gamma


def reward_table(mdp: FiniteHorizonMdp, reward_override: Optional[SurrogateReward] = None) -> np.ndarray:
    """Per-step reward as a ``(T, S)`` array."""
    if reward_override is None:
        return np.broadcast_to(mdp.reward, (mdp.horizon, mdp.num_states))
    reward_override.check(mdp)
    return reward_override.values.T


def evaluate_policy(
    mdp: FiniteHorizonMdp,
    policy: NonStationaryPolicy,
    gamma: float,
    reward_override: Optional[SurrogateReward] = None,
) -> ValueTable:
    """Backward-induction evaluation of a deterministic non-stationary policy."""
    gamma = _check_gamma(gamma)
    policy.check(mdp)
    R = reward_table(mdp, reward_override)
    T, S = mdp.horizon, mdp.num_states
    V = np.zeros((T + 1, S))
    rows = np.arange(S)
    for t in range(T - 1, -1, -1):
        P_pi = mdp.transition[rows, policy.action_table[t]]
        V[t] = R[t] + gamma * (P_pi @ V[t + 1])
    return ValueTable(V)


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax with near-ties going to the lowest index."""
    best = q.max(axis=-1, keepdims=True)
    tol = TIE_RTOL * np.maximum(1.0, np.abs(best))
    return np.argmax(q >= best - tol, axis=-1)


def q_values(mdp: FiniteHorizonMdp, R_t: np.ndarray, next_values: np.ndarray, gamma: float) -> np.ndarray:
    """``Q(s, a) = R_t(s) + gamma * sum_s' P(s'|s,a) V(s')`` for one time step."""
    return R_t[:, None] + gamma * (mdp.transition @ next_values)


def solve_optimal(
    mdp: FiniteHorizonMdp,
    gamma: float,
    reward_override: Optional[SurrogateReward] = None,
) -> tuple[NonStationaryPolicy, ValueTable]:
    """Optimal policy and value for the ``gamma``-discounted finite-horizon problem."""
    gamma = _check_gamma(gamma)
    R = reward_table(mdp, reward_override)
    T, S = mdp.horizon, mdp.num_states
    V = np.zeros((T + 1, S))
    table = np.zeros((T, S), dtype=np.int64)
    rows = np.arange(S)
    for t in range(T - 1, -1, -1):
        q = q_values(mdp, R[t], V[t + 1], gamma)
        table[t] = greedy_actions(q)
        V[t] = q[rows, table[t]]
    return NonStationaryPolicy(table), ValueTable(V)


def total_return(mdp: FiniteHorizonMdp, policy: NonStationaryPolicy) -> float:
    """Expected undiscounted return of ``policy`` under the original reward."""
    return evaluate_policy(mdp, policy, 1.0).initial(mdp)


def optimal_total_return(mdp: FiniteHorizonMdp) -> float:
    return solve_optimal(mdp, 1.0)[1].initial(mdp)


def default_gamma_grid(step: float = 0.01) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, n + 1), 12)


def find_gamma_crit(
    mdp: FiniteHorizonMdp,
    grid: Optional[Sequence[float]] = None,
    tolerance: float = 1e-9,
) -> float:
    """Smallest grid discount above which every discounted-optimal policy is total-optimal.

    The grid is scanned from the top; the answer is the last point of the
    unbroken run of total-optimal discounts that ends at 1.0.
    """
    grid = default_gamma_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("gamma grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("gamma grid must be strictly increasing")
    if grid[-1] != 1.0:
        raise ValueError("gamma grid must end at 1.0")
    best = optimal_total_return(mdp)
    crit = grid[-1]
    for gamma in grid[::-1]:
        policy, _ = solve_optimal(mdp, gamma)
        if abs(total_return(mdp, policy) - best) > tolerance:
            break
        crit = gamma
    return float(crit)


def gamma_sweep(mdp: FiniteHorizonMdp, grid: Sequence[float]) -> list[dict]:
    """Total return of the discounted-optimal policy for each grid point."""
    rows = []
    for gamma in grid:
        policy, _ = solve_optimal(mdp, gamma)
        rows.append(
            {
                "gamma": float(gamma),
                "total_return": total_return(mdp, policy),
                "start_action": policy.action(0, int(np.argmax(mdp.initial_dist))),
            }
        )
    return rows


def reachable_mask(mdp: FiniteHorizonMdp) -> np.ndarray:
    """``(T + 1, S)`` mask of states reachable at each time under some policy."""
    T, S = mdp.horizon, mdp.num_states
    mask = np.zeros((T + 1, S), dtype=bool)
    mask[0] = mdp.initial_dist > 0
    successors = mdp.transition.max(axis=1) > 0  # (S, S')
    for t in range(T):
        mask[t + 1] = successors[mask[t]].any(axis=0)
    return mask


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_trajectory(
    mdp: FiniteHorizonMdp,
    policy: Optional[NonStationaryPolicy],
    exploration_eps: float = 0.0,
    seed: SeedLike = 0,
) -> Trajectory:
    """Roll out ``policy`` for ``T`` steps with epsilon-uniform exploration.

    ``policy=None`` acts uniformly at random at every step.
    """
    if not 0.0 <= exploration_eps <= 1.0:
        raise ValueError("exploration_eps must lie in [0, 1]")
    if policy is not None:
        policy.check(mdp)
    rng = as_generator(seed)
    T, A = mdp.horizon, mdp.num_actions
    states = np.empty(T + 1, dtype=np.int64)
    actions = np.empty(T, dtype=np.int64)
    cum_mu = np.cumsum(mdp.initial_dist)
    cum_P = np.cumsum(mdp.transition, axis=2)
    states[0] = _draw(cum_mu, rng.random())
    for t in range(T):
        s = states[t]
        # both draws are always consumed so the stream does not depend on the policy
        explore = rng.random() < exploration_eps
        random_action = rng.integers(A)
        if policy is None or explore:
            a = random_action
        else:
            a = policy.action_table[t, s]
        actions[t] = a
        states[t + 1] = _draw(cum_P[s, a], rng.random())
    return Trajectory(states, actions, mdp.reward[states[:-1]])


def _draw(cumulative: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cumulative, u, side="right"))
    return min(idx, cumulative.size - 1)


def rollout(mdp: FiniteHorizonMdp, policy: NonStationaryPolicy, start_state: int) -> Trajectory:
    """Most-likely-successor rollout; exact for deterministic kernels."""
    T = mdp.horizon
    states = [start_state]
    actions = []
    for t in range(T):
        a = policy.action(t, states[-1])
        actions.append(a)
        states.append(int(np.argmax(mdp.transition[states[-1], a])))
    states = np.array(states)
    return Trajectory(states, actions, mdp.reward[states[:-1]])


def is_deterministic(mdp: FiniteHorizonMdp) -> bool:
    return bool(np.all((mdp.transition == 0.0) | (mdp.transition == 1.0)))
