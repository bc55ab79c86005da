"""Linear time-indexed reward learned from return-ranked sub-trajectory pairs.

A sub-trajectory starting at step ``n`` is encoded as
``phi[(s_t, t - n)] += gamma ** (t - n)``: the view is scored as an episode that
starts at time 0. A :class:`LinearRewardModel` scores it with ``<w, phi>`` and
pairs are fitted with the logistic (Bradley-Terry) loss
``log(1 + exp(-(score_winner - score_loser)))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mdp_core import (
    FiniteHorizonMdp,
    NonStationaryPolicy,
    SeedLike,
    SurrogateReward,
    Trajectory,
    as_generator,
    sample_trajectory,
    solve_optimal,
)

TIE_TOLERANCE = 1e-9
PAIR_MODES = ("any", "equal_length")


class NoPreferenceSignal(RuntimeError):
    """The buffer holds no pair of sub-trajectories with distinct returns."""

    def __init__(self, msg: str = "no preference signal"):
        super().__init__(msg)


@dataclass
class LinearRewardModel:
    """Weights over (state, time offset) features, or state-only features."""

    num_states: int
    horizon: int
    weights: np.ndarray = None
    time_features: bool = True

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(self.feature_dim)
        self.weights = np.array(self.weights, dtype=float)
        if self.weights.shape != (self.feature_dim,):
            raise ValueError(f"expected {self.feature_dim} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("model weights must be finite")

    @property
    def feature_dim(self) -> int:
        return self.num_states * (self.horizon if self.time_features else 1)

    @classmethod
    def for_mdp(cls, mdp: FiniteHorizonMdp, time_features: bool = True) -> "LinearRewardModel":
        return cls(mdp.num_states, mdp.horizon, time_features=time_features)

    def copy(self) -> "LinearRewardModel":
        return LinearRewardModel(self.num_states, self.horizon, self.weights.copy(), self.time_features)

    def score(self, phi: np.ndarray) -> np.ndarray:
        return phi @ self.weights

    def to_dict(self) -> dict:
        return {
            "kind": "linear_reward_model",
            "schema_version": 1,
            "num_states": self.num_states,
            "horizon": self.horizon,
            "time_features": self.time_features,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearRewardModel":
        if d.get("kind") != "linear_reward_model":
            raise ValueError(f"expected a linear_reward_model document, got {d.get('kind')!r}")
        return cls(int(d["num_states"]), int(d["horizon"]), np.array(d["weights"]), bool(d["time_features"]))


def featurize(
    traj: Trajectory,
    start: int,
    gamma: float,
    num_states: int,
    horizon: int,
    time_features: bool = True,
    max_length: Optional[int] = None,
) -> np.ndarray:
    """Discounted visit features of the view of ``traj`` beginning at step ``start``.

    ``max_length`` caps the number of steps in the view.
    """
    if not 0 <= start < len(traj):
        raise IndexError(f"start {start} outside [0, {len(traj)})")
    end = len(traj) if max_length is None else min(len(traj), start + max_length)
    k = np.arange(end - start)
    if time_features and k.size and k[-1] >= horizon:
        raise IndexError("sub-trajectory longer than the feature horizon")
    states = traj.states[start:end]
    phi = np.zeros(num_states * (horizon if time_features else 1))
    idx = states * horizon + k if time_features else states
    np.add.at(phi, idx, gamma ** k)
    return phi


def pair_logit(model: LinearRewardModel, features_i: np.ndarray, features_j: np.ndarray) -> float:
    """Log-odds that ``i`` outranks ``j``."""
    if features_i.shape != model.weights.shape or features_j.shape != model.weights.shape:
        raise ValueError("feature and weight dimensions differ")
    return float(model.weights @ features_i - model.weights @ features_j)


def logistic_loss_and_grad(weights: np.ndarray, diff: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss ``log(1 + exp(-<w, diff>))`` and its gradient in ``w``.

    ``diff`` is ``phi_winner - phi_loser``; rows are averaged when it is 2-d.
    """
    z = diff @ weights
    loss = np.logaddexp(0.0, -z)
    coeff = -np.exp(-np.logaddexp(0.0, z))  # -sigmoid(-z), stable for large |z|
    if diff.ndim == 1:
        return float(loss), coeff * diff
    return float(loss.mean()), (coeff[:, None] * diff).mean(axis=0)


@dataclass(frozen=True)
class PairSample:
    """Two sub-trajectories from the buffer; ``winner`` is 0 when ``(i, n)`` has the larger return."""

    i: int
    n: int
    j: int
    m: int
    winner: int

    def swapped(self) -> "PairSample":
        return PairSample(self.j, self.m, self.i, self.n, 1 - self.winner)


@dataclass
class ReplayBuffer:
    """Bounded FIFO store of trajectories with cached suffix returns and features.

    Single writer: :meth:`append` mutates, everything else only reads. Use
    :meth:`snapshot` to hand a frozen view to concurrent readers.
    """

    capacity: int
    num_states: int
    horizon: int
    max_length: Optional[int] = None
    trajectories: list = field(default_factory=list)
    inserted: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self._uids: list = []
        self._suffix: list = []
        self._feature_cache: dict = {}

    def __len__(self) -> int:
        return len(self.trajectories)

    def append(self, traj: Trajectory) -> None:
        if len(self.trajectories) == self.capacity:
            self.trajectories.pop(0)
            old = self._uids.pop(0)
            self._suffix.pop(0)
            for key in [k for k in self._feature_cache if k[0] == old]:
                del self._feature_cache[key]
        self.trajectories.append(traj)
        self._uids.append(self.inserted)
        self._suffix.append(self._suffix_returns(traj))
        self.inserted += 1

    def extend(self, trajs: Sequence[Trajectory]) -> None:
        for t in trajs:
            self.append(t)

    def _suffix_returns(self, traj: Trajectory) -> np.ndarray:
        r = traj.rewards
        if self.max_length is None:
            return np.cumsum(r[::-1])[::-1].copy()
        c = np.concatenate([[0.0], np.cumsum(r)])
        n = np.arange(len(r))
        return c[np.minimum(n + self.max_length, len(r))] - c[n]

    def sub_return(self, i: int, n: int) -> float:
        """Undiscounted return of the (capped) view of trajectory ``i`` from step ``n``."""
        return float(self._suffix[i][n])

    def features(self, i: int, gamma: float, time_features: bool = True) -> np.ndarray:
        """All-offset features of trajectory ``i``, shape ``(len, D)``."""
        key = (self._uids[i], float(gamma), time_features)
        cached = self._feature_cache.get(key)
        if cached is None:
            traj = self.trajectories[i]
            cached = np.stack(
                [
                    featurize(traj, n, gamma, self.num_states, self.horizon, time_features, self.max_length)
                    for n in range(len(traj))
                ]
            )
            cached.setflags(write=False)
            self._feature_cache[key] = cached
        return cached

    def snapshot(self) -> "ReplayBuffer":
        clone = ReplayBuffer(self.capacity, self.num_states, self.horizon, self.max_length,
                             list(self.trajectories), self.inserted)
        clone._uids = list(self._uids)
        clone._suffix = list(self._suffix)
        clone._feature_cache = dict(self._feature_cache)
        return clone

    def view_length(self, i: int, n: int) -> int:
        rem = len(self.trajectories[i]) - n
        return rem if self.max_length is None else min(rem, self.max_length)

    def has_preference_signal(self, pair_mode: str = "any") -> bool:
        return next(iter(enumerate_pairs(self, pair_mode, limit=1)), None) is not None


def make_pair(buffer: ReplayBuffer, i: int, n: int, j: int, m: int,
              pair_mode: str = "any") -> Optional[PairSample]:
    """Pair two views, or ``None`` when their returns tie or the mode rejects them."""
    if pair_mode == "equal_length" and buffer.view_length(i, n) != buffer.view_length(j, m):
        return None
    ri, rj = buffer.sub_return(i, n), buffer.sub_return(j, m)
    if abs(ri - rj) <= TIE_TOLERANCE:
        return None
    return PairSample(i, n, j, m, 0 if ri > rj else 1)


def enumerate_pairs(buffer: ReplayBuffer, pair_mode: str = "any", limit: Optional[int] = None):
    """Yield every rankable pair of views, in a fixed order."""
    count = 0
    views = [(i, n) for i in range(len(buffer)) for n in range(len(buffer.trajectories[i]))]
    for a in range(len(views)):
        for b in range(a + 1, len(views)):
            pair = make_pair(buffer, *views[a], *views[b], pair_mode=pair_mode)
            if pair is not None:
                yield pair
                count += 1
                if limit is not None and count >= limit:
                    return


def pair_difference(buffer: ReplayBuffer, pair: PairSample, gamma: float, time_features: bool = True) -> np.ndarray:
    """``phi_winner - phi_loser``."""
    phi_i = buffer.features(pair.i, gamma, time_features)[pair.n]
    phi_j = buffer.features(pair.j, gamma, time_features)[pair.m]
    return phi_i - phi_j if pair.winner == 0 else phi_j - phi_i


def pairwise_loss(
    model: LinearRewardModel, pair: PairSample, buffer: ReplayBuffer, gamma: float
) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of the correct label and its gradient in the weights."""
    diff = pair_difference(buffer, pair, gamma, model.time_features)
    return logistic_loss_and_grad(model.weights, diff)


def sample_pairs(
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    batch_size: int,
    pairs_per_batch: int,
    pair_mode: str = "any",
    max_attempts: int = 20,
) -> list[PairSample]:
    """Draw a batch of views with uniform start offsets and pair them up.

    All rankable pairs among the batch are formed, then ``pairs_per_batch`` of
    them are kept at random.
    """
    if pair_mode not in PAIR_MODES:
        raise ValueError(f"pair_mode must be one of {PAIR_MODES}")
    K = len(buffer)
    if K < 2:
        raise NoPreferenceSignal()
    for _ in range(max_attempts):
        idx = rng.choice(K, size=min(batch_size, K), replace=False)
        starts = [int(rng.integers(len(buffer.trajectories[i]))) for i in idx]
        pairs = []
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                p = make_pair(buffer, int(idx[a]), starts[a], int(idx[b]), starts[b], pair_mode)
                if p is not None:
                    pairs.append(p)
        if pairs:
            if len(pairs) > pairs_per_batch:
                keep = rng.choice(len(pairs), size=pairs_per_batch, replace=False)
                pairs = [pairs[k] for k in sorted(keep)]
            return pairs
    if not buffer.has_preference_signal(pair_mode):
        raise NoPreferenceSignal()
    raise NoPreferenceSignal(f"no rankable pair found in {max_attempts} batches")


def rank_accuracy(model: LinearRewardModel, buffer: ReplayBuffer, pairs: Sequence[PairSample], gamma: float) -> float:
    """Fraction of pairs whose winner scores strictly higher."""
    if not pairs:
        return float("nan")
    diffs = np.stack([pair_difference(buffer, p, gamma, model.time_features) for p in pairs])
    return float(np.mean(diffs @ model.weights > 0))


def discount_preconditioner(model: LinearRewardModel, gamma: float) -> np.ndarray:
    """Per-weight scale ``gamma ** -k`` for time-offset ``k`` (1 where that underflows).

    SGD steps scaled by this vector are plain SGD in the coordinates
    ``u = gamma ** k * w``, where every visit feature has unit size. Without it
    the late-offset features are ``gamma ** k`` small and the separator that
    ranks by total return is practically out of reach for small ``gamma``.
    """
    if not model.time_features:
        return np.ones(model.feature_dim)
    scale = gamma ** np.arange(model.horizon, dtype=float)
    inv = np.where(scale > 1e-150, 1.0 / np.maximum(scale, 1e-150), 1.0)
    return np.tile(inv, model.num_states)


def train_epoch(
    model: LinearRewardModel,
    buffer: ReplayBuffer,
    gamma: float,
    batch_size: int = 32,
    pairs_per_batch: int = 64,
    learning_rate: float = 0.05,
    seed: SeedLike = 0,
    steps: int = 1,
    pair_mode: str = "any",
    l2: float = 0.0,
    precondition: bool = True,
) -> tuple[LinearRewardModel, dict]:
    """Run ``steps`` minibatch SGD updates on a copy of ``model``.

    Each step samples views via :func:`sample_pairs`, averages the logistic
    gradient over the pairs and moves the weights by ``learning_rate``. With
    ``precondition`` the step is taken in discount-normalized coordinates (see
    :func:`discount_preconditioner`); the loss and the model are unchanged.

    Returns the updated copy and ``{"mean_loss", "rank_accuracy"}``: the loss
    before each update and the accuracy after it, averaged over the epoch's
    sampled pairs.

    Raises:
        NoPreferenceSignal: when the buffer has no pair with distinct returns.
    """
    rng = as_generator(seed)
    out = model.copy()
    scale = discount_preconditioner(out, gamma) if precondition else None
    losses, correct, seen = [], 0, 0
    for _ in range(steps):
        pairs = sample_pairs(buffer, rng, batch_size, pairs_per_batch, pair_mode)
        diffs = np.stack([pair_difference(buffer, p, gamma, out.time_features) for p in pairs])
        loss, grad = logistic_loss_and_grad(out.weights, diffs)
        if l2:
            grad = grad + l2 * out.weights
        if scale is not None:
            grad = grad * scale * scale
        out.weights = out.weights - learning_rate * grad
        losses.append(loss)
        correct += int(np.sum(diffs @ out.weights > 0))
        seen += len(pairs)
    return out, {"mean_loss": float(np.mean(losses)), "rank_accuracy": correct / seen}


def fit(
    model: LinearRewardModel,
    buffer: ReplayBuffer,
    gamma: float,
    epochs: int,
    seed: SeedLike = 0,
    log=None,
    **kwargs,
) -> tuple[LinearRewardModel, list[dict]]:
    """Repeated :func:`train_epoch`; ``log`` is called with each epoch's record."""
    rng = as_generator(seed)
    history = []
    for epoch in range(epochs):
        model, metrics = train_epoch(model, buffer, gamma, seed=rng, **kwargs)
        record = {"epoch": epoch, **metrics}
        history.append(record)
        if log is not None:
            log(record)
    return model, history


def to_surrogate(model: LinearRewardModel) -> SurrogateReward:
    """Reshape weights into the ``[state][time]`` table used by the solvers."""
    if model.time_features:
        return SurrogateReward(model.weights.reshape(model.num_states, model.horizon))
    return SurrogateReward(np.repeat(model.weights[:, None], model.horizon, axis=1))


def mixed_quality_trajectories(
    mdp: FiniteHorizonMdp,
    n: int,
    seed: SeedLike = 0,
    myopic_gamma: float = 0.3,
) -> list[Trajectory]:
    """Rollouts mixing the optimal, a myopic and a random policy under varied exploration."""
    rng = as_generator(seed)
    policies: list[Optional[NonStationaryPolicy]] = [
        solve_optimal(mdp, 1.0)[0],
        solve_optimal(mdp, myopic_gamma)[0],
        None,
    ]
    out = []
    for _ in range(n):
        policy = policies[int(rng.integers(len(policies)))]
        out.append(sample_trajectory(mdp, policy, float(rng.uniform()), rng))
    return out
