import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reward_tweaking import (
    LinearRewardModel,
    NoPreferenceSignal,
    ReplayBuffer,
    Trajectory,
    canonical_puddle_layout,
    featurize,
    make_puddle_world,
    sample_trajectory,
    to_surrogate,
    train_epoch,
)
from reward_tweaking.ranking_learner import (
    PairSample,
    enumerate_pairs,
    fit,
    logistic_loss_and_grad,
    make_pair,
    pair_difference,
    pair_logit,
    pairwise_loss,
    rank_accuracy,
)


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def buffer_from(trajs, num_states, horizon, capacity=100):
    buf = ReplayBuffer(capacity, num_states, horizon)
    buf.extend(trajs)
    return buf


def traj(states, rewards):
    return Trajectory(states, [0] * (len(states) - 1), rewards)


class TestFeaturize:
    def test_single_step_one_hot(self):
        phi = featurize(traj([3, 0], [0.0]), 0, 0.7, num_states=5, horizon=4)
        expected = np.zeros(20)
        expected[3 * 4 + 0] = 1.0
        np.testing.assert_array_equal(phi, expected)

    def test_gamma_one_counts_visits(self, puddle, rng):
        t = sample_trajectory(puddle, None, 1.0, rng)
        phi = featurize(t, 0, 1.0, puddle.num_states, puddle.horizon)
        assert phi.sum() == len(t)
        for k, s in enumerate(t.states[:-1]):
            assert phi[s * puddle.horizon + k] == 1.0

    def test_collapsed_time(self):
        phi = featurize(traj([0, 0, 1], [1.0, 1.0]), 0, 0.5, num_states=2, horizon=2, time_features=False)
        np.testing.assert_array_equal(phi, [1.5, 0.0])

    def test_offset_rebases_discount(self):
        t = traj([1, 2, 0, 2], [0.0, 0.0, 0.0])
        phi = featurize(t, 1, 0.5, num_states=3, horizon=3)
        assert phi[2 * 3 + 0] == 1.0 and phi[0 * 3 + 1] == 0.5

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.integers(0, 17))
    def test_entry_sum(self, seed, gamma, start):
        mdp = make_puddle_world(canonical_puddle_layout())
        t = sample_trajectory(mdp, None, 1.0, seed)
        phi = featurize(t, start, gamma, mdp.num_states, mdp.horizon)
        assert np.all(phi >= 0)
        assert phi.sum() == pytest.approx(sum(gamma ** k for k in range(len(t) - start)), abs=1e-12)

    def test_start_out_of_range(self):
        with pytest.raises(IndexError):
            featurize(traj([0, 1], [0.0]), 1, 0.5, 2, 2)


class TestLogitAndLoss:
    def test_zero_weights(self, rng):
        model = LinearRewardModel(3, 2)
        a, b = rng.random(6), rng.random(6)
        assert pair_logit(model, a, b) == 0.0
        loss, _ = logistic_loss_and_grad(model.weights, a - b)
        assert loss == pytest.approx(math.log(2))

    def test_identical_features(self, rng):
        model = LinearRewardModel(3, 2, rng.normal(size=6))
        phi = rng.random(6)
        assert pair_logit(model, phi, phi) == 0.0

    def test_goal_indicator(self, puddle, layout):
        goal = layout.state((4, layout.goal_column))
        w = np.zeros(puddle.num_states * puddle.horizon)
        w[goal * puddle.horizon : (goal + 1) * puddle.horizon] = 1.0
        model = LinearRewardModel(puddle.num_states, puddle.horizon, w)
        reach = traj([layout.state((4, c)) for c in range(8)] + [goal] * 11, [0.0] * 18)
        stay = traj([layout.state((4, 0))] * 19, [0.0] * 18)
        phi = [featurize(t, 0, 0.9, puddle.num_states, puddle.horizon) for t in (reach, stay)]
        assert pair_logit(model, *phi) > 0

    def test_saturated_loss(self):
        loss, grad = logistic_loss_and_grad(np.array([1e6]), np.array([1.0]))
        assert loss == 0.0 and np.all(grad == 0.0)
        loss, _ = logistic_loss_and_grad(np.array([-1e6]), np.array([1.0]))
        assert loss == pytest.approx(1e6)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            d = int(rng.integers(2, 12))
            w, diff = rng.normal(size=d), rng.normal(size=(int(rng.integers(1, 6)), d))
            _, g = logistic_loss_and_grad(w, diff)
            fd = central_difference(lambda x: logistic_loss_and_grad(x, diff)[0], w)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-12)

    def test_pairwise_loss_direction(self):
        buf = buffer_from([traj([0, 1], [1.0]), traj([1, 0], [0.0])], 2, 1)
        pair = make_pair(buf, 0, 0, 1, 0)
        assert pair.winner == 0
        good = LinearRewardModel(2, 1, np.array([1.0, -1.0]))
        bad = LinearRewardModel(2, 1, np.array([-1.0, 1.0]))
        assert pairwise_loss(good, pair, buf, 0.5)[0] < pairwise_loss(bad, pair, buf, 0.5)[0]

    def test_swap_negates_logit(self, puddle, rng):
        buf = buffer_from([sample_trajectory(puddle, None, 1.0, rng) for _ in range(6)], puddle.num_states, puddle.horizon)
        model = LinearRewardModel.for_mdp(puddle)
        model.weights[:] = rng.normal(size=model.feature_dim)
        for pair in list(enumerate_pairs(buf, limit=50)):
            d1 = pair_difference(buf, pair, 0.5)
            d2 = pair_difference(buf, pair.swapped(), 0.5)
            assert d1 @ model.weights == -(d2 @ model.weights) or np.array_equal(d1, d2)


class TestShiftInvariance:
    def test_equal_length_order_unchanged(self, puddle, rng):
        gamma = 0.8
        trajs = [sample_trajectory(puddle, None, 1.0, rng) for _ in range(20)]
        model = LinearRewardModel.for_mdp(puddle)
        model.weights[:] = rng.normal(size=model.feature_dim)
        shifted = LinearRewardModel(model.num_states, model.horizon, model.weights + 3.7)
        for n in (0, 5, 12):
            phis = np.stack([featurize(t, n, gamma, puddle.num_states, puddle.horizon) for t in trajs])
            np.testing.assert_array_equal(np.argsort(phis @ model.weights, kind="stable"),
                                          np.argsort(phis @ shifted.weights, kind="stable"))


class TestReplayBuffer:
    def test_capacity_and_fifo(self):
        buf = ReplayBuffer(2, 2, 1)
        for r in (0.0, 1.0, 2.0):
            buf.append(traj([0, 1], [r]))
        assert len(buf) == 2
        assert [t.total_return for t in buf.trajectories] == [1.0, 2.0]

    def test_cached_returns(self, puddle, rng):
        buf = buffer_from([sample_trajectory(puddle, None, 1.0, rng) for _ in range(10)], puddle.num_states, puddle.horizon)
        for i, t in enumerate(buf.trajectories):
            for n in range(len(t)):
                assert buf.sub_return(i, n) == pytest.approx(t.rewards[n:].sum(), abs=1e-12)

    def test_length_cap(self):
        buf = ReplayBuffer(5, 3, 4, max_length=2)
        buf.append(traj([0, 1, 2, 1, 0], [1.0, 2.0, 3.0, 4.0]))
        assert buf.sub_return(0, 1) == 5.0
        assert buf.view_length(0, 3) == 1

    def test_ties_never_paired(self):
        buf = buffer_from([traj([0, 1], [1.0]), traj([1, 0], [1.0])], 2, 1)
        assert make_pair(buf, 0, 0, 1, 0) is None
        assert not buf.has_preference_signal()

    def test_snapshot_is_frozen(self):
        buf = buffer_from([traj([0, 1], [1.0])], 2, 1)
        snap = buf.snapshot()
        buf.append(traj([1, 0], [0.0]))
        assert len(snap) == 1


class TestTraining:
    def test_no_signal(self):
        buf = buffer_from([traj([0, 1], [1.0]), traj([1, 0], [1.0])], 2, 1)
        with pytest.raises(NoPreferenceSignal, match="no preference signal"):
            train_epoch(LinearRewardModel(2, 1), buf, 0.5)

    def test_two_trajectories(self):
        buf = buffer_from([traj([0, 1, 1], [1.0, 0.0]), traj([1, 0, 0], [0.0, 1.0])], 2, 2)
        model, history = fit(LinearRewardModel(2, 2), buf, 0.5, epochs=500, learning_rate=0.1)
        pairs = list(enumerate_pairs(buf))
        assert rank_accuracy(model, buf, pairs, 0.5) == 1.0
        assert history[-1]["rank_accuracy"] == 1.0

    def test_zero_learning_rate_is_noop(self, puddle, rng):
        buf = buffer_from([sample_trajectory(puddle, None, 1.0, rng) for _ in range(10)], puddle.num_states, puddle.horizon)
        model = LinearRewardModel.for_mdp(puddle)
        model.weights[:] = rng.normal(size=model.feature_dim)
        out, _ = train_epoch(model, buf, 0.3, learning_rate=0.0)
        np.testing.assert_array_equal(out.weights, model.weights)

    def test_seeded_determinism(self, puddle, rng):
        buf = buffer_from([sample_trajectory(puddle, None, 1.0, rng) for _ in range(10)], puddle.num_states, puddle.horizon)
        a, _ = train_epoch(LinearRewardModel.for_mdp(puddle), buf, 0.3, steps=5, seed=4)
        b, _ = train_epoch(LinearRewardModel.for_mdp(puddle), buf, 0.3, steps=5, seed=4)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_input_model_not_mutated(self, puddle, rng):
        buf = buffer_from([sample_trajectory(puddle, None, 1.0, rng) for _ in range(10)], puddle.num_states, puddle.horizon)
        model = LinearRewardModel.for_mdp(puddle)
        train_epoch(model, buf, 0.3, steps=3)
        assert not model.weights.any()


class TestToSurrogate:
    def test_zero(self):
        assert not to_surrogate(LinearRewardModel(4, 3)).values.any()

    def test_reshape_round_trip(self, rng):
        model = LinearRewardModel(4, 3, rng.normal(size=12))
        np.testing.assert_array_equal(to_surrogate(model).values.reshape(-1), model.weights)

    def test_state_only_features_repeat_over_time(self, rng):
        model = LinearRewardModel(4, 3, rng.normal(size=4), time_features=False)
        sur = to_surrogate(model)
        assert sur.values.shape == (4, 3)
        np.testing.assert_array_equal(sur.values[:, 2], model.weights)
