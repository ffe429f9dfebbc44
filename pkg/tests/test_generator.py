"""Generator checks: conditional sampling, embeddings, matching, assembly."""

from itertools import permutations

import numpy as np
import pytest

from trajsynth.core import GridSystem, MobilityMatrix
from trajsynth.errors import NonFiniteError, ValidationError, ZeroSliceError
from trajsynth.generator import (
    Assignment,
    TrajectoryGenerator,
    build_generator_params,
    conditional_sample,
    encode_spatiotemporal,
    generate_tracks,
    global_context,
    lsa_solve,
    recurrent_match,
    sample_all_hours,
)
from trajsynth.nn import DiffArray, ModelParams, arr_sum

from gradcheck import check_gradients

GRID = GridSystem(0.0, 1.0, 0.0, 1.0, cells_per_side=4, hours_per_day=4)


def matrix_from_slices(slices, uid="m"):
    return MobilityMatrix(uid, np.asarray(slices, dtype=float))


def uniform_two_cell_matrix(hours=4, n=4, cells=((0, 0), (3, 3))):
    data = np.zeros((hours, n, n))
    for r, c in cells:
        data[:, r, c] = 1.0 / len(cells)
    return MobilityMatrix("m", data)


class TestConditionalSample:
    def test_point_mass_slice(self):
        data = np.zeros((2, 4, 4))
        data[:, 1, 2] = 1.0
        s = conditional_sample(MobilityMatrix("m", data), 0, 16, seed=0)
        assert s.cells == tuple([(1, 2)] * 16)
        assert s.probabilities == tuple([1.0] * 16)

    def test_zero_slice_rejected(self):
        data = np.zeros((2, 4, 4))
        data[0, 1, 2] = 1.0
        with pytest.raises(ZeroSliceError):
            conditional_sample(MobilityMatrix("m", data), 1, 8, seed=0)

    def test_binomial_mean_over_repetitions(self):
        matrix = uniform_two_cell_matrix()
        counts = []
        for rep in range(1000):
            s = conditional_sample(matrix, 0, 64, seed=rep)
            counts.append(sum(1 for c in s.cells if c == (0, 0)))
        mean = np.mean(counts)
        se = np.sqrt(64 * 0.25 / 1000)  # binomial sd over 10^3 repetitions
        assert abs(mean - 32.0) < 3 * se

    def test_total_variation_on_16_cell_slice(self):
        rng = np.random.default_rng(5)
        slice_ = rng.uniform(0.1, 1.0, size=(4, 4))
        slice_ /= slice_.sum()
        matrix = MobilityMatrix("m", slice_[None, :, :])
        s = conditional_sample(matrix, 0, 10_000, seed=3)
        hist = np.zeros((4, 4))
        for r, c in s.cells:
            hist[r, c] += 1
        hist /= hist.sum()
        tv = 0.5 * np.abs(hist - slice_).sum()
        assert tv < 0.05

    def test_deterministic_per_seed_and_stream(self):
        matrix = uniform_two_cell_matrix()
        a = conditional_sample(matrix, 2, 32, seed=9)
        b = conditional_sample(matrix, 2, 32, seed=9)
        assert a.cells == b.cells
        c = conditional_sample(matrix, 3, 32, seed=9)
        assert a.cells != c.cells  # different hour, different stream


class TestEncoding:
    def params(self):
        return build_generator_params(seed=1, hours=4, encoding_dim=8)

    def point_set(self, cells, hour=1):
        from trajsynth.generator import SampledPointSet

        return SampledPointSet(hour=hour, cells=tuple(cells), probabilities=tuple([0.5] * len(cells)))

    def test_identical_points_identical_rows(self):
        emb = encode_spatiotemporal(self.point_set([(1, 1), (1, 1), (2, 3)]), GRID, self.params())
        assert np.array_equal(emb.values[0], emb.values[1])
        assert not np.array_equal(emb.values[0], emb.values[2])

    def test_output_shape_is_twice_encoding_dim(self):
        emb = encode_spatiotemporal(self.point_set([(0, 0)] * 5), GRID, self.params())
        assert emb.shape == (5, 16)

    def test_same_cell_different_hours_differ_in_time_half(self):
        params = self.params()
        a = encode_spatiotemporal(self.point_set([(2, 2)], hour=1), GRID, params)
        b = encode_spatiotemporal(self.point_set([(2, 2)], hour=3), GRID, params)
        np.testing.assert_array_equal(a.values[0, :8], b.values[0, :8])
        assert not np.array_equal(a.values[0, 8:], b.values[0, 8:])

    def test_global_context_single_row(self):
        params = self.params()
        emb = encode_spatiotemporal(self.point_set([(1, 2)]), GRID, params)
        out = global_context(emb, params, n_heads=2)
        assert out.shape == emb.shape

    def test_global_context_permutation_equivariance(self):
        params = self.params()
        emb = encode_spatiotemporal(self.point_set([(0, 0), (1, 2), (3, 3), (2, 1)]), GRID, params)
        out = global_context(emb, params, n_heads=2).values
        perm = np.array([2, 0, 3, 1])
        out_perm = global_context(DiffArray(emb.values[perm]), params, n_heads=2).values
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_global_context_gradients(self):
        params = build_generator_params(seed=2, hours=4, encoding_dim=4)
        names = [n for n in params.names() if n.startswith(("gen/attn", "gen/ln"))]
        x = np.random.default_rng(0).normal(size=(3, 8))
        values = [params[n].values.copy() for n in names]
        weight = np.random.default_rng(1).normal(size=(3, 8))

        def build(xx, *tensors):
            p = ModelParams(seed=0)
            for nm, w in zip(names, tensors):
                p._store[nm] = w
            return arr_sum(global_context(xx, p, n_heads=2) * weight)

        check_gradients(build, [x] + values)


class TestLsaSolve:
    def test_hand_case(self):
        assignment = lsa_solve(np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]))
        assert assignment.permutation == (1, 0, 2)
        assert assignment.total_cost == 5.0

    def test_zero_diagonal_identity(self):
        cost = np.ones((5, 5)) - np.eye(5)
        assignment = lsa_solve(cost)
        assert assignment.permutation == tuple(range(5))
        assert assignment.total_cost == 0.0

    def test_matches_brute_force_on_random_sevens(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n = int(rng.integers(2, 8))
            cost = rng.uniform(size=(n, n))
            got = lsa_solve(cost)
            best = min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))
            assert got.total_cost == pytest.approx(best, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            lsa_solve(np.array([[1.0, np.inf], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ValidationError):
            lsa_solve(np.ones((2, 3)))

    def test_assignment_must_be_permutation(self):
        with pytest.raises(ValidationError):
            Assignment(permutation=(0, 0, 2), total_cost=1.0)


class TestRecurrentMatch:
    def run_generation(self, matrix, sample_size=6, seed=0, cost_mode="hidden"):
        params = build_generator_params(seed=1, hours=matrix.hours, encoding_dim=8)
        grid = GridSystem(0.0, 1.0, 0.0, 1.0, cells_per_side=matrix.n, hours_per_day=matrix.hours)
        return generate_tracks(
            matrix, grid, params, sample_size=sample_size, seed=seed,
            n_heads=2, cost_mode=cost_mode,
        )

    def test_sample_size_one_concatenates(self):
        matrix = uniform_two_cell_matrix()
        result = self.run_generation(matrix, sample_size=1)
        assert len(result.trajectories) == 1
        assert len(result.trajectories[0].points) == 4

    def test_track_count_and_length_contract(self):
        matrix = uniform_two_cell_matrix()
        result = self.run_generation(matrix, sample_size=6)
        assert len(result.trajectories) == 6
        assert all(len(t.points) == 4 for t in result.trajectories)

    def test_per_hour_multiset_preserved(self):
        rng = np.random.default_rng(8)
        data = rng.uniform(0.05, 1.0, size=(4, 4, 4))
        data /= data.sum(axis=(1, 2), keepdims=True)
        matrix = MobilityMatrix("m", data)
        result = self.run_generation(matrix, sample_size=16, seed=4)
        for hour in range(4):
            assembled = sorted(result.per_hour_cells(hour))
            sampled = sorted(result.sampled[hour].cells)
            assert assembled == sampled

    def test_deterministic_given_params_and_seed(self):
        matrix = uniform_two_cell_matrix()
        a = self.run_generation(matrix, sample_size=8, seed=2)
        b = self.run_generation(matrix, sample_size=8, seed=2)
        assert [t.points for t in a.trajectories] == [t.points for t in b.trajectories]

    def test_well_separated_tracks_stay_separate(self):
        # Two stationary far-apart tracks, one point per track per hour; with
        # an identity encoder (raw coordinates) the matcher must keep each
        # track in its cluster, as brute force over the two pairings shows.
        from trajsynth.generator import SampledPointSet

        hours, n = 4, 8
        grid = GridSystem(0.0, 1.0, 0.0, 1.0, cells_per_side=n, hours_per_day=hours)
        cells = ((0, 0), (7, 7))
        sampled = [
            SampledPointSet(hour=h, cells=cells, probabilities=(0.5, 0.5))
            for h in range(hours)
        ]
        embeddings = [
            DiffArray(np.array([grid.cell_center_unit(r, c) for r, c in s.cells]))
            for s in sampled
        ]
        params = ModelParams(seed=0)
        for gate in ("z", "r", "h"):
            params.zeros(f"gen/gru/w{gate}", (2, 2))
            params.zeros(f"gen/gru/y{gate}", (2, 2))
            params.zeros(f"gen/gru/b{gate}", (2,))
        # embedding distance here is monotone in cell distance, so staying
        # put costs 0 while any crossing costs the cluster separation
        result = recurrent_match(embeddings, sampled, params, cost_mode="embedding")
        tracks = {t.points for t in result.trajectories}
        assert tracks == {tuple([(0, 0)] * hours), tuple([(7, 7)] * hours)}
        coords = np.array([grid.cell_center_unit(r, c) for r, c in cells])
        stay = 0.0
        cross = 2 * np.linalg.norm(coords[0] - coords[1])
        for assignment in result.assignments:
            assert assignment.total_cost == pytest.approx(stay, abs=1e-12)
            assert assignment.total_cost < cross

    def test_hour_sequence_must_be_contiguous(self):
        matrix = uniform_two_cell_matrix()
        sampled = sample_all_hours(matrix, 4, 0, "m")
        params = build_generator_params(seed=1, hours=4, encoding_dim=8)
        grid = GRID
        embeddings = [
            global_context(encode_spatiotemporal(s, grid, params), params, n_heads=2)
            for s in sampled
        ]
        with pytest.raises(ValidationError):
            recurrent_match(embeddings, [sampled[0], sampled[2], sampled[1], sampled[3]], params)

    def test_estimator_wrapper_params(self):
        gen = TrajectoryGenerator(sample_size=8, encoding_dim=8, n_heads=2, seed=5)
        assert gen.get_params()["sample_size"] == 8
        gen.set_params(sample_size=4)
        tracks = gen.init_params(4).sample(uniform_two_cell_matrix(), GRID, seed=1)
        assert len(tracks) == 4
        with pytest.raises(ValidationError):
            gen.set_params(bogus=1)
