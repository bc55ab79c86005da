"""Online reward tweaking: collect, rank, refit the surrogate, re-plan.

Each iteration of :func:`run`

1. plays one epsilon-greedy trajectory with the current policy,
2. appends it to the replay buffer,
3. samples views of buffered trajectories and
4. takes ranking-loss SGD steps on the linear surrogate,
5. re-plans against the surrogate at the configured discount.

:func:`run_baseline` is the same loop planning on the true reward.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .mdp_core import (
    FiniteHorizonMdp,
    NonStationaryPolicy,
    SurrogateReward,
    greedy_actions,
    reward_table,
    sample_trajectory,
    solve_optimal,
    total_return,
)
from .ranking_learner import (
    LinearRewardModel,
    NoPreferenceSignal,
    ReplayBuffer,
    to_surrogate,
    train_epoch,
)
from .serialization import append_jsonl, content_hash, write_jsonl

SOLVERS = ("exact_backward_induction", "tabular_q_learning")


@dataclass
class LoopConfig:
    gamma: float
    iterations: int = 300
    exploration_eps: float = 0.5
    eps_decay: float = 0.995
    buffer_capacity: int = 1000
    reward_train_epochs_per_iter: int = 10
    policy_solver: str = "exact_backward_induction"
    seed: int = 0
    batch_size: int = 32
    pairs_per_batch: int = 128
    learning_rate: float = 0.05
    pair_mode: str = "any"
    max_length: Optional[int] = None
    time_features: bool = True
    precondition: bool = True
    q_episodes_per_iter: int = 20
    q_learning_rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not 0.0 <= self.exploration_eps <= 1.0:
            raise ValueError("exploration_eps must lie in [0, 1]")
        if not 0.0 <= self.eps_decay <= 1.0:
            raise ValueError("eps_decay must lie in [0, 1]")
        if self.policy_solver not in SOLVERS:
            raise ValueError(f"policy_solver must be one of {SOLVERS}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LoopLog:
    records: list = field(default_factory=list)

    def append(self, record: dict) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_return(self) -> float:
        return self.records[-1]["total_return"] if self.records else float("nan")

    def write(self, path) -> None:
        """Write one JSON line per iteration; NaN metrics become null."""
        write_jsonl(path, (jsonable_record(rec) for rec in self.records))


class QLearner:
    """Finite-horizon tabular Q-learning on a (possibly surrogate) reward table.

    ``Q[t, s, a]`` estimates ``R[t, s] + gamma * E[max_a' Q[t + 1, s', a']]``.
    Episodes are simulated on the MDP's kernel.
    """

    def __init__(self, mdp: FiniteHorizonMdp, gamma: float, learning_rate: float, rng: np.random.Generator):
        self.mdp = mdp
        self.gamma = gamma
        self.alpha = learning_rate
        self.rng = rng
        self.Q = np.zeros((mdp.horizon + 1, mdp.num_states, mdp.num_actions))
        self._cum_P = np.cumsum(mdp.transition, axis=2)
        self._cum_mu = np.cumsum(mdp.initial_dist)

    def _draw(self, cumulative) -> int:
        return min(int(np.searchsorted(cumulative, self.rng.random(), side="right")), cumulative.size - 1)

    def train(self, R: np.ndarray, episodes: int, eps: float) -> None:
        T, A = self.mdp.horizon, self.mdp.num_actions
        for _ in range(episodes):
            s = self._draw(self._cum_mu)
            for t in range(T):
                if self.rng.random() < eps:
                    a = int(self.rng.integers(A))
                else:
                    a = int(greedy_actions(self.Q[t, s]))
                s2 = self._draw(self._cum_P[s, a])
                target = R[t, s] + self.gamma * self.Q[t + 1, s2].max()
                self.Q[t, s, a] += self.alpha * (target - self.Q[t, s, a])
                s = s2

    def policy(self) -> NonStationaryPolicy:
        return NonStationaryPolicy(greedy_actions(self.Q[:-1]))


def _plan(
    mdp: FiniteHorizonMdp,
    config: LoopConfig,
    surrogate: Optional[SurrogateReward],
    q: Optional[QLearner],
    eps: float,
) -> NonStationaryPolicy:
    if config.policy_solver == "exact_backward_induction":
        return solve_optimal(mdp, config.gamma, surrogate)[0]
    q.train(np.asarray(reward_table(mdp, surrogate)), config.q_episodes_per_iter, max(eps, 0.1))
    return q.policy()


def run(
    mdp: FiniteHorizonMdp,
    config: LoopConfig,
    log_path=None,
) -> tuple[NonStationaryPolicy, LinearRewardModel, LoopLog]:
    """Adaptive reward tweaking.

    Until the buffer holds two views with distinct returns the model stays at
    zero and the agent acts uniformly at random. ``total_return`` in the log is
    always measured on the original reward.
    """
    rng = np.random.default_rng(config.seed)
    model = LinearRewardModel.for_mdp(mdp, config.time_features)
    buffer = ReplayBuffer(config.buffer_capacity, mdp.num_states, mdp.horizon, config.max_length)
    q = QLearner(mdp, config.gamma, config.q_learning_rate, rng) if config.policy_solver == "tabular_q_learning" else None
    policy: Optional[NonStationaryPolicy] = None
    trained = False
    eps = config.exploration_eps
    log = LoopLog()
    for it in range(config.iterations):
        traj = sample_trajectory(mdp, policy if trained else None, eps, rng)
        buffer.append(traj)
        rank_acc, loss = math.nan, math.nan
        try:
            for _ in range(config.reward_train_epochs_per_iter):
                model, metrics = train_epoch(
                    model,
                    buffer,
                    config.gamma,
                    batch_size=config.batch_size,
                    pairs_per_batch=config.pairs_per_batch,
                    learning_rate=config.learning_rate,
                    seed=rng,
                    pair_mode=config.pair_mode,
                    precondition=config.precondition,
                )
                rank_acc, loss = metrics["rank_accuracy"], metrics["mean_loss"]
                trained = True
        except NoPreferenceSignal:
            pass
        surrogate = to_surrogate(model)
        policy = _plan(mdp, config, surrogate, q, eps)
        eps *= config.eps_decay
        log.append(
            {
                "iteration": it,
                "total_return": total_return(mdp, policy),
                "rank_accuracy": rank_acc,
                "mean_loss": loss,
                "buffer_size": len(buffer),
                "reward_updated": trained and not math.isnan(rank_acc),
                "exploration_eps": eps,
                "surrogate_hash": content_hash(model.weights),
            }
        )
        if log_path is not None:
            append_jsonl(log_path, jsonable_record(log.records[-1]))
    if policy is None:
        policy = _plan(mdp, config, to_surrogate(model), q, eps)
    return policy, model, log


def run_baseline(
    mdp: FiniteHorizonMdp,
    gamma: float,
    config: Optional[LoopConfig] = None,
    log_path=None,
) -> tuple[NonStationaryPolicy, LoopLog]:
    """Control arm: the same collection loop, planning on the true reward."""
    config = config or LoopConfig(gamma=gamma)
    if config.gamma != gamma:
        config = LoopConfig(**{**config.to_dict(), "gamma": gamma})
    rng = np.random.default_rng(config.seed)
    q = QLearner(mdp, gamma, config.q_learning_rate, rng) if config.policy_solver == "tabular_q_learning" else None
    policy: Optional[NonStationaryPolicy] = None
    eps = config.exploration_eps
    log = LoopLog()
    for it in range(config.iterations):
        sample_trajectory(mdp, policy, eps, rng)
        policy = _plan(mdp, config, None, q, eps)
        eps *= config.eps_decay
        log.append(
            {
                "iteration": it,
                "total_return": total_return(mdp, policy),
                "rank_accuracy": math.nan,
                "mean_loss": math.nan,
                "buffer_size": it + 1,
                "reward_updated": False,
                "exploration_eps": eps,
                "surrogate_hash": None,
            }
        )
        if log_path is not None:
            append_jsonl(log_path, jsonable_record(log.records[-1]))
    if policy is None:
        policy = _plan(mdp, config, None, q, eps)
    return policy, log


def jsonable_record(record: dict) -> dict:
    """Copy of a log record with NaN metrics replaced by None."""
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in record.items()}
