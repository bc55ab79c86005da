"""Tabular domains: the two-path MDP, a chain, the puddle world and random MDPs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .mdp_core import FiniteHorizonMdp, InvalidMdpError

LEFT, RIGHT = 0, 1
# grid actions, in tie-breaking order
UP, DOWN, WEST, EAST = 0, 1, 2, 3
GRID_ACTIONS = ("up", "down", "left", "right")
_MOVES = {UP: (-1, 0), DOWN: (1, 0), WEST: (0, -1), EAST: (0, 1)}

# random-MDP size limits used by the property tests
MAX_RANDOM_STATES = 12
MAX_RANDOM_ACTIONS = 4
MAX_RANDOM_HORIZON = 12


def make_four_state_mdp(r_a: float, r_b: float, r_c: float) -> FiniteHorizonMdp:
    """Start state ``s`` choosing between a left path (a, a) and a right path (b, c).

    The start state pays 0, so the two paths are worth ``gamma * (1 + gamma) * r_a``
    and ``gamma * (r_b + gamma * r_c)``: the same comparison as
    ``(1 + gamma) r_a`` versus ``r_b + gamma r_c``. Three reward slots are needed
    because the start state's own slot is counted.
    """
    s, a, b, c = range(4)
    P = np.zeros((4, 2, 4))
    P[s, LEFT, a] = 1.0
    P[s, RIGHT, b] = 1.0
    P[a, :, a] = 1.0
    P[b, :, c] = 1.0
    P[c, :, c] = 1.0
    return FiniteHorizonMdp(
        transition=P,
        reward=np.array([0.0, r_a, r_b, r_c]),
        horizon=3,
        initial_dist=np.eye(4)[s],
        absorbing=np.array([False, True, False, True]),
        state_names=("s", "a", "b", "c"),
        action_names=("left", "right"),
        meta={"env": "four_state", "r_a": r_a, "r_b": r_b, "r_c": r_c},
    )


def make_chain_mdp(
    n: int,
    rewards: Sequence[float],
    horizon: int,
    start: int = 0,
    absorbing_ends: tuple[bool, bool] = (False, True),
) -> FiniteHorizonMdp:
    """Line of ``n`` states with left/right moves.

    Moving off either end leaves the agent in place. Which ends are absorbing
    is configurable; by default only the far end is, so the agent can leave
    the start.
    """
    if n < 2:
        raise ValueError("chain needs at least two states")
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (n,):
        raise ValueError(f"expected {n} rewards, got {rewards.shape}")
    if not 0 <= start < n:
        raise ValueError("start outside the chain")
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, min(s + 1, n - 1)] = 1.0
    absorbing = np.zeros(n, dtype=bool)
    for end, flag in zip((0, n - 1), absorbing_ends):
        if flag:
            P[end] = 0.0
            P[end, :, end] = 1.0
            absorbing[end] = True
    return FiniteHorizonMdp(
        transition=P,
        reward=rewards,
        horizon=horizon,
        initial_dist=np.eye(n)[start],
        absorbing=absorbing,
        action_names=("left", "right"),
        meta={"env": "chain", "n": n},
    )


def make_chain_fixture() -> FiniteHorizonMdp:
    """Ten-state chain test fixture with a near trap and a distant payoff.

    The agent starts in state 1. State 0 pays 0.3 per step and state 9 pays
    1.0 per step; both ends are absorbing and the horizon is 12. Going right
    earns 4.0 in total, going left 3.3, so short-sighted discounts pick the trap.
    """
    rewards = np.zeros(10)
    rewards[0], rewards[9] = 0.3, 1.0
    mdp = make_chain_mdp(10, rewards, horizon=12, start=1, absorbing_ends=(True, True))
    return replace(mdp, meta={"env": "chain_fixture"})


@dataclass(frozen=True)
class PuddleLayout:
    """Grid geometry for the puddle world. Cells are ``(row, col)``, row 0 on top."""

    width: int
    height: int
    start_cell: tuple[int, int]
    goal_column: int
    puddle_cells: frozenset = field(default_factory=frozenset)
    horizon: int = 18
    r_step: float = -1.0
    r_puddle: float = -0.5
    r_goal: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "start_cell", tuple(int(x) for x in self.start_cell))
        object.__setattr__(
            self, "puddle_cells", frozenset(tuple(int(x) for x in c) for c in self.puddle_cells)
        )
        self.validate()

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def validate(self) -> None:
        if self.width < 2 or self.height < 1:
            raise InvalidMdpError("puddle grid needs width >= 2 and height >= 1")
        if not 0 <= self.goal_column < self.width:
            raise InvalidMdpError("goal column out of bounds")
        if not self.in_bounds(self.start_cell):
            raise InvalidMdpError(f"start cell {self.start_cell} out of bounds")
        for cell in self.puddle_cells:
            if not self.in_bounds(cell):
                raise InvalidMdpError(f"puddle cell {cell} out of bounds")
            if cell[1] == self.goal_column:
                raise InvalidMdpError(f"puddle cell {cell} overlaps the goal column")
        if self.horizon < 1:
            raise InvalidMdpError("horizon must be positive")
        if self.horizon < self.shortest_path_length():
            raise InvalidMdpError("horizon shorter than the path from start to goal")

    def shortest_path_length(self) -> int:
        return abs(self.goal_column - self.start_cell[1])

    def state(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, state: int) -> tuple[int, int]:
        return divmod(int(state), self.width)

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "start_cell": list(self.start_cell),
            "goal_column": self.goal_column,
            "puddle_cells": sorted(list(c) for c in self.puddle_cells),
            "horizon": self.horizon,
            "r_step": self.r_step,
            "r_puddle": self.r_puddle,
            "r_goal": self.r_goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PuddleLayout":
        known = {
            "width", "height", "start_cell", "goal_column", "puddle_cells",
            "horizon", "r_step", "r_puddle", "r_goal",
        }
        unknown = set(d) - known - {"kind", "schema_version", "notes"}
        if unknown:
            raise ValueError(f"unknown puddle layout keys: {sorted(unknown)}")
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            start_cell=tuple(d["start_cell"]),
            goal_column=int(d["goal_column"]),
            puddle_cells=frozenset(tuple(c) for c in d.get("puddle_cells", [])),
            horizon=int(d["horizon"]),
            r_step=float(d.get("r_step", -1.0)),
            r_puddle=float(d.get("r_puddle", -0.5)),
            r_goal=float(d.get("r_goal", 0.0)),
        )


def make_puddle_world(layout: PuddleLayout) -> FiniteHorizonMdp:
    """Deterministic 4-connected grid; walls block, the goal column absorbs."""
    layout.validate()
    W, H = layout.width, layout.height
    S = W * H
    P = np.zeros((S, 4, S))
    reward = np.full(S, layout.r_step)
    absorbing = np.zeros(S, dtype=bool)
    for r in range(H):
        for c in range(W):
            s = layout.state((r, c))
            if c == layout.goal_column:
                P[s, :, s] = 1.0
                absorbing[s] = True
                reward[s] = layout.r_goal
                continue
            if (r, c) in layout.puddle_cells:
                reward[s] = layout.r_puddle
            for a, (dr, dc) in _MOVES.items():
                nxt = (r + dr, c + dc)
                if not layout.in_bounds(nxt):
                    nxt = (r, c)
                P[s, a, layout.state(nxt)] = 1.0
    names = tuple(f"({r},{c})" for r in range(H) for c in range(W))
    return FiniteHorizonMdp(
        transition=P,
        reward=reward,
        horizon=layout.horizon,
        initial_dist=np.eye(S)[layout.state(layout.start_cell)],
        absorbing=absorbing,
        state_names=names,
        action_names=GRID_ACTIONS,
        meta={"env": "puddle", "layout": layout.to_dict()},
    )


def grid_distances(layout: PuddleLayout, source: Optional[tuple[int, int]] = None) -> np.ndarray:
    """BFS step distance from ``source`` (default: start) to every cell, shape ``(H, W)``."""
    source = layout.start_cell if source is None else source
    dist = np.full((layout.height, layout.width), -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _MOVES.values():
            nxt = (r + dr, c + dc)
            if layout.in_bounds(nxt) and dist[nxt] < 0:
                dist[nxt] = dist[r, c] + 1
                queue.append(nxt)
    return dist


def make_random_mdp(
    num_states: int,
    num_actions: int,
    horizon: int,
    seed: int,
    concentration: float = 1.0,
    initial: str = "dirichlet",
) -> FiniteHorizonMdp:
    """Dirichlet rows, uniform rewards in [-1, 1]; deterministic given ``seed``.

    ``initial`` is ``"dirichlet"`` for a random start distribution or
    ``"single"`` for a point mass on state 0.
    """
    if not (1 <= num_states <= MAX_RANDOM_STATES and 1 <= num_actions <= MAX_RANDOM_ACTIONS):
        raise ValueError("random MDP sizes outside the supported test range")
    if not 1 <= horizon <= MAX_RANDOM_HORIZON:
        raise ValueError("random MDP horizon outside the supported test range")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
    P /= P.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=num_states)
    if initial == "single":
        mu = np.eye(num_states)[0]
    else:
        mu = rng.dirichlet(np.ones(num_states))
        mu /= mu.sum()
    return FiniteHorizonMdp(
        transition=P,
        reward=reward,
        horizon=horizon,
        initial_dist=mu,
        meta={"env": "random", "seed": seed},
    )


def make_layered_mdp(
    layer_sizes: Sequence[int],
    num_actions: int,
    seed: int,
) -> FiniteHorizonMdp:
    """Time-layered random MDP: layer ``k`` only transitions into layer ``k + 1``.

    There is one layer per time step ``0 .. T``, so ``T = len(layer_sizes) - 1``
    and every state is reachable at exactly one time. Final-layer states are
    absorbing. The first layer is the support of the start distribution.
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least two layers")
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(layer_sizes)])
    S = int(offsets[-1])
    P = np.zeros((S, num_actions, S))
    absorbing = np.zeros(S, dtype=bool)
    for k, size in enumerate(layer_sizes):
        lo, hi = offsets[k], offsets[k + 1]
        if k == len(layer_sizes) - 1:
            for s in range(lo, hi):
                P[s, :, s] = 1.0
            absorbing[lo:hi] = True
            continue
        nlo, nhi = offsets[k + 1], offsets[k + 2]
        rows = rng.dirichlet(np.ones(nhi - nlo), size=(hi - lo, num_actions))
        rows /= rows.sum(axis=2, keepdims=True)
        P[lo:hi, :, nlo:nhi] = rows
    mu = np.zeros(S)
    mu[: layer_sizes[0]] = rng.dirichlet(np.ones(layer_sizes[0]))
    mu /= mu.sum()
    return FiniteHorizonMdp(
        transition=P,
        reward=rng.uniform(-1.0, 1.0, size=S),
        horizon=len(layer_sizes) - 1,
        initial_dist=mu,
        absorbing=absorbing,
        meta={"env": "layered", "layer_sizes": list(layer_sizes), "seed": seed},
    )
