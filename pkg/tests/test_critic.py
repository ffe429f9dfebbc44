"""Critic forward/gap oracles and the full-network gradient check."""

import numpy as np
import pytest

from trajsynth.core import DailyTrajectory, GridSystem, MobilityMatrix
from trajsynth.critic import (
    TrajectoryCritic,
    build_critic_params,
    condition_embedding,
    critic_batch_gap,
    critic_forward,
    critic_scores,
    trajectory_inputs,
)
from trajsynth.errors import ShapeMismatchError, ValidationError
from trajsynth.nn import ModelParams, DiffArray

from gradcheck import check_gradients

HOURS, N = 4, 8
GRID = GridSystem(0.0, 1.0, 0.0, 1.0, cells_per_side=N, hours_per_day=HOURS)


def toy_matrix(uid="m"):
    rng = np.random.default_rng(1)
    data = rng.uniform(0.1, 1.0, size=(HOURS, N, N))
    data /= data.sum(axis=(1, 2), keepdims=True)
    return MobilityMatrix(uid, data)


def toy_trajectory(day=0, cells=None):
    cells = cells or [(0, 0), (1, 2), (3, 3), (7, 7)]
    return DailyTrajectory("u", day, tuple(cells))


def small_params(seed=3):
    return build_critic_params(seed, HOURS, encoding_dim=4, cond_dim=6,
                               head_hidden=5, conv_widths=(3, 3, 4))


class TestCriticForward:
    def test_zeroed_final_layer_scores_zero(self):
        params = small_params()
        params[f"crt/head2/w"].values[:] = 0.0
        params[f"crt/head2/b"].values[:] = 0.0
        score = critic_forward(toy_trajectory(), toy_matrix(), GRID, params, n_heads=2)
        assert float(score.values) == 0.0

    def test_deterministic(self):
        params = small_params()
        a = critic_forward(toy_trajectory(), toy_matrix(), GRID, params, n_heads=2)
        b = critic_forward(toy_trajectory(), toy_matrix(), GRID, params, n_heads=2)
        assert float(a.values) == float(b.values)

    def test_scores_finite_under_clipping_scale_weights(self):
        params = small_params()
        for _, arr in params.items():
            np.clip(arr.values, -0.01, 0.01, out=arr.values)
        score = critic_forward(toy_trajectory(), toy_matrix(), GRID, params, n_heads=2)
        assert np.isfinite(score.values).all()

    def test_wrong_length_trajectory_rejected(self):
        with pytest.raises(ShapeMismatchError):
            trajectory_inputs([DailyTrajectory("u", 0, ((0, 0),) * 3)], GRID)

    def test_full_critic_gradient_check(self):
        params = small_params(seed=7)
        names = params.names()
        rng = np.random.default_rng(0)
        values = [params[n].values + 0.02 * rng.normal(size=params[n].shape) for n in names]
        trajectory = toy_trajectory()
        matrix = toy_matrix()
        loc, time = trajectory_inputs([trajectory], GRID)

        def build(*tensors):
            p = ModelParams(seed=0)
            for nm, w in zip(names, tensors):
                p._store[nm] = w
            cond = condition_embedding(matrix, p)
            return critic_scores(loc, time, cond, p, n_heads=2)[0]

        check_gradients(build, values, tol=1e-4)


class TestBatchGap:
    def test_identical_batches_gap_zero(self):
        params = small_params()
        batch = [toy_trajectory(day=i) for i in range(3)]
        gap = critic_batch_gap(batch, batch, toy_matrix(), GRID, params, n_heads=2)
        assert float(gap.values) == 0.0

    def test_constant_critic_gap_zero(self):
        params = small_params()
        params[f"crt/head2/w"].values[:] = 0.0
        params[f"crt/head2/b"].values[:] = 2.5  # constant score everywhere
        real = [toy_trajectory(0), toy_trajectory(1)]
        synth = [toy_trajectory(2, cells=[(1, 1), (2, 2), (4, 4), (5, 5)])]
        gap = critic_batch_gap(real, synth, toy_matrix(), GRID, params, n_heads=2)
        assert float(gap.values) == pytest.approx(0.0, abs=1e-12)

    def test_two_point_hand_arithmetic(self):
        params = small_params()
        t1 = toy_trajectory(0)
        t2 = toy_trajectory(1, cells=[(1, 1), (2, 2), (4, 4), (5, 5)])
        matrix = toy_matrix()
        s1 = float(critic_forward(t1, matrix, GRID, params, n_heads=2).values)
        s2 = float(critic_forward(t2, matrix, GRID, params, n_heads=2).values)
        gap = critic_batch_gap([t1], [t2], matrix, GRID, params, n_heads=2)
        assert float(gap.values) == pytest.approx(s1 - s2, abs=1e-12)

    def test_swapping_batches_negates_gap(self):
        params = small_params()
        real = [toy_trajectory(0), toy_trajectory(1)]
        synth = [toy_trajectory(2, cells=[(1, 1), (2, 2), (4, 4), (5, 5)])]
        matrix = toy_matrix()
        forward = critic_batch_gap(real, synth, matrix, GRID, params, n_heads=2)
        backward = critic_batch_gap(synth, real, matrix, GRID, params, n_heads=2)
        assert float(forward.values) == pytest.approx(-float(backward.values), abs=1e-12)

    def test_batch_order_invariance(self):
        params = small_params()
        real = [toy_trajectory(i) for i in range(3)]
        synth = [toy_trajectory(9, cells=[(1, 1), (2, 2), (4, 4), (5, 5)])]
        matrix = toy_matrix()
        a = critic_batch_gap(real, synth, matrix, GRID, params, n_heads=2)
        b = critic_batch_gap(real[::-1], synth, matrix, GRID, params, n_heads=2)
        assert float(a.values) == pytest.approx(float(b.values), abs=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValidationError):
            critic_batch_gap([], [toy_trajectory()], toy_matrix(), GRID, small_params())


class TestSurrogateInjection:
    def test_surrogate_keeps_forward_value_and_routes_gradient(self):
        params = small_params()
        trajectory = toy_trajectory()
        matrix = toy_matrix()
        loc, time = trajectory_inputs([trajectory], GRID)
        cond = condition_embedding(matrix, params)
        plain = critic_scores(loc, time, cond, params, n_heads=2)
        surrogate = DiffArray(np.random.default_rng(2).normal(size=(1, HOURS, 8)), requires_grad=True)
        injected = critic_scores(loc, time, cond, params, n_heads=2, surrogate=surrogate)
        np.testing.assert_array_equal(plain.values, injected.values)
        injected.backward(np.ones(1))
        assert surrogate.grad is not None
        assert np.abs(surrogate.grad).max() > 0


class TestWrapper:
    def test_wrapper_scores(self):
        critic = TrajectoryCritic(encoding_dim=4, cond_dim=6, n_heads=2, conv_widths=(3, 3, 4), seed=1)
        critic.init_params(HOURS)
        score = critic.score(toy_trajectory(), toy_matrix(), GRID)
        assert np.isfinite(score)
        assert critic.get_params()["cond_dim"] == 6
