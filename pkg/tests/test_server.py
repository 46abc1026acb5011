import numpy as np
import pytest

from fedsim.errors import InvalidArgumentError, ProtocolError
from fedsim.fed_client import ClientUpdate
from fedsim.numerics import FlatParams, RngStream
from fedsim.oracles import kkt_row_argmin
from fedsim.server import (
    CollaborationMatrix,
    SgcaConfig,
    aggregate,
    fedavg_aggregate,
    pairwise_similarity,
    solve_row,
    update_matrix,
)


def flat(values, manifest=None):
    values = np.asarray(values, dtype=float)
    return FlatParams(values, manifest or ((1, values.size),))


def make_update(client_id, values, n_i=10, round_index=1):
    return ClientUpdate(
        client_id=client_id,
        round_index=round_index,
        low_params=flat(values),
        n_i=n_i,
        train_loss=0.0,
        test_iou=0.0,
        test_dice=0.0,
    )


class TestPairwiseSimilarity:
    def test_l2_identical_vectors_give_zero(self):
        params = [flat([1.0, 2.0])] * 3
        s = pairwise_similarity(params, "l2_based", "none")
        assert np.array_equal(s, np.zeros((3, 3)))

    def test_l2_three_four_five_triangle(self):
        s = pairwise_similarity([flat([0.0, 0.0]), flat([3.0, 4.0])], "l2_based", "none")
        assert s[0, 1] == pytest.approx(-5.0)
        assert s[1, 0] == pytest.approx(-5.0)

    def test_l1_distance(self):
        s = pairwise_similarity([flat([0.0, 0.0]), flat([3.0, 4.0])], "l1_based", "none")
        assert s[0, 1] == pytest.approx(-7.0)

    def test_cosine_self_similarity_is_one(self):
        stream = RngStream(30, 0)
        params = [flat(stream.draw_gaussian(5)) for _ in range(4)]
        s = pairwise_similarity(params, "cosine", "none")
        assert np.allclose(np.diag(s), 1.0)
        assert np.all(np.abs(s) <= 1.0 + 1e-12)

    def test_inner_self_similarity_is_squared_norm(self):
        v = np.array([1.0, 2.0, 2.0])
        s = pairwise_similarity([flat(v), flat(-v)], "inner", "none")
        assert s[0, 0] == pytest.approx(9.0)

    def test_raw_matrix_is_symmetric(self):
        stream = RngStream(31, 0)
        params = [flat(stream.draw_gaussian(6)) for _ in range(5)]
        for metric in ("inner", "cosine", "l1_based", "l2_based"):
            s = pairwise_similarity(params, metric, "none")
            assert np.allclose(s, s.T, atol=1e-12)

    def test_max_abs_row_normalization_bounds_off_diagonal(self):
        stream = RngStream(32, 0)
        params = [flat(10.0 * stream.draw_gaussian(6)) for _ in range(4)]
        s = pairwise_similarity(params, "l2_based", "max_abs_row")
        for i in range(4):
            off = np.abs(np.delete(s[i], i))
            assert off.max() == pytest.approx(1.0)

    def test_manifest_mismatch_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            pairwise_similarity([flat([1.0]), flat([1.0], ((2, 1),))], "l2_based")


class TestSolveRow:
    def test_alpha_zero_gives_uniform(self):
        w = solve_row(0.37, np.array([5.0, -2.0, 0.1, 9.0]), 0.0)
        assert np.allclose(w, 0.25, atol=1e-12)
        assert len(set(w.tolist())) == 1  # exactly equal entries

    def test_vertex_solution(self):
        w = solve_row(0.5, np.array([0.0, -1.0]), 2.0)
        assert np.array_equal(w, [1.0, 0.0])

    def test_interior_solution_matches_oracle(self):
        s_row = np.array([0.0, -0.2, -0.8])
        w = solve_row(1.0 / 3.0, s_row, 1.0)
        assert np.max(np.abs(w - np.array([0.5, 0.4, 0.1]))) < 1e-9
        assert np.max(np.abs(w - kkt_row_argmin(1.0 / 3.0, s_row, 1.0))) < 1e-9

    def test_matches_oracle_on_random_instances(self):
        stream = RngStream(33, 0)
        worst = 0.0
        for _ in range(300):
            n = stream.draw_integer(2, 9)
            s_row = stream.draw_gaussian(n)
            alpha = stream.draw_uniform(1, 0.0, 100.0)[0]
            m = stream.draw_uniform(1, 0.0, 1.0)[0]
            diff = solve_row(m, s_row, alpha) - kkt_row_argmin(m, s_row, alpha)
            worst = max(worst, float(np.max(np.abs(diff))))
        assert worst < 1e-9

    def test_shift_invariance_in_similarities(self):
        stream = RngStream(34, 0)
        s_row = stream.draw_gaussian(5)
        base = solve_row(0.2, s_row, 3.0)
        assert np.allclose(solve_row(0.2, s_row + 7.5, 3.0), base, atol=1e-12)

    def test_m_value_does_not_affect_the_row(self):
        # The prior term is constant within a row, so projection shift-invariance
        # makes the solution independent of m.
        stream = RngStream(35, 0)
        s_row = stream.draw_gaussian(4)
        a = solve_row(0.1, s_row, 2.0)
        b = solve_row(0.9, s_row, 2.0)
        assert np.allclose(a, b, atol=1e-12)

    def test_large_alpha_selects_the_similarity_maximizer(self):
        s_row = np.array([-0.5, 0.3, -0.1, 0.2])
        w = solve_row(0.25, s_row, 1e6)
        assert w[1] > 1.0 - 1e-6

    def test_non_finite_input_rejected(self):
        with pytest.raises(InvalidArgumentError):
            solve_row(0.5, np.array([np.nan, 0.0]), 1.0)


class TestUpdateMatrix:
    def test_alpha_zero_yields_uniform_rows(self):
        updates = [make_update(i, [float(i), 0.0], n_i=10 + i) for i in range(4)]
        matrix = update_matrix(updates, SgcaConfig(alpha=0.0))
        assert np.allclose(matrix.w, 0.25, atol=1e-12)
        for row in matrix.w:
            assert len(set(row.tolist())) == 1

    def test_identical_pair_attracts_weight(self):
        updates = [
            make_update(0, [1.0, 1.0]),
            make_update(1, [1.0, 1.0]),
            make_update(2, [4.0, -3.0]),
        ]
        matrix = update_matrix(updates, SgcaConfig(alpha=1.0))
        assert matrix.w[0, 1] >= matrix.w[0, 2]
        assert matrix.w[1, 0] >= matrix.w[1, 2]

    def test_client_relabeling_permutes_the_matrix(self):
        stream = RngStream(36, 0)
        vectors = [stream.draw_gaussian(4) for _ in range(3)]
        sizes = [10, 20, 30]
        base = update_matrix(
            [make_update(i, vectors[i], n_i=sizes[i]) for i in range(3)], SgcaConfig()
        )
        perm = [2, 0, 1]  # new id i holds what used to be client perm[i]
        permuted = update_matrix(
            [make_update(i, vectors[perm[i]], n_i=sizes[perm[i]]) for i in range(3)],
            SgcaConfig(),
        )
        for i in range(3):
            for j in range(3):
                assert permuted.w[i, j] == pytest.approx(base.w[perm[i], perm[j]], abs=1e-12)

    def test_rows_are_stochastic_for_random_inputs(self):
        stream = RngStream(37, 0)
        for alpha in (0.0, 0.5, 2.0, 50.0):
            updates = [
                make_update(i, stream.draw_gaussian(6), n_i=stream.draw_integer(5, 50))
                for i in range(5)
            ]
            matrix = update_matrix(updates, SgcaConfig(alpha=alpha))
            assert np.all(matrix.w >= 0.0)
            assert np.allclose(matrix.w.sum(axis=1), 1.0, atol=1e-9)

    def test_duplicate_ids_rejected(self):
        updates = [make_update(0, [1.0]), make_update(0, [2.0])]
        with pytest.raises(ProtocolError):
            update_matrix(updates, SgcaConfig())

    def test_inconsistent_rounds_rejected(self):
        updates = [make_update(0, [1.0]), make_update(1, [2.0], round_index=2)]
        with pytest.raises(ProtocolError):
            update_matrix(updates, SgcaConfig())

    def test_column_mode_reflects_dataset_sizes(self):
        # With zero similarities, column mode projects the size prior itself.
        updates = [make_update(i, [1.0, 1.0], n_i=n) for i, n in enumerate((10, 20, 70))]
        matrix = update_matrix(updates, SgcaConfig(alpha=0.0, m_mode="column_mj"))
        assert np.allclose(matrix.w[0], [0.1, 0.2, 0.7], atol=1e-12)


class TestAggregate:
    def _params(self, values):
        return flat(values)

    def test_identity_matrix_returns_inputs(self):
        params = [self._params([1.0, 2.0]), self._params([3.0, 4.0])]
        out = aggregate(CollaborationMatrix(np.eye(2), 0), params)
        assert out[0].equals(params[0])
        assert out[1].equals(params[1])

    def test_uniform_matrix_returns_mean(self):
        params = [self._params([0.0, 2.0]), self._params([2.0, 0.0])]
        out = aggregate(CollaborationMatrix(np.full((2, 2), 0.5), 0), params)
        assert np.allclose(out[0].values, [1.0, 1.0])
        assert np.allclose(out[1].values, [1.0, 1.0])

    def test_convex_combination(self):
        params = [self._params([1.0, 1.0]), self._params([5.0, 5.0])]
        w = CollaborationMatrix(np.array([[0.75, 0.25], [0.25, 0.75]]), 0)
        out = aggregate(w, params)
        assert np.allclose(out[0].values, [2.0, 2.0])

    def test_outputs_stay_in_convex_hull(self):
        stream = RngStream(38, 0)
        params = [self._params(stream.draw_gaussian(6)) for _ in range(4)]
        rows = np.vstack([np.abs(stream.draw_gaussian(4)) for _ in range(4)])
        rows = rows / rows.sum(axis=1, keepdims=True)
        out = aggregate(CollaborationMatrix(rows, 0), params)
        stacked = np.stack([p.values for p in params])
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        for mixed in out:
            assert np.all(mixed.values >= lo - 1e-12)
            assert np.all(mixed.values <= hi + 1e-12)

    def test_matrix_validation_rejects_bad_rows(self):
        with pytest.raises(InvalidArgumentError):
            CollaborationMatrix(np.array([[0.5, 0.6], [0.5, 0.5]]), 0)
        with pytest.raises(InvalidArgumentError):
            CollaborationMatrix(np.array([[-0.1, 1.1], [0.5, 0.5]]), 0)


class TestFedavg:
    def test_equal_sizes_average(self):
        out = fedavg_aggregate([flat([0.0, 0.0]), flat([2.0, 2.0])], [5, 5])
        assert np.allclose(out.values, [1.0, 1.0])

    def test_size_weighted_average(self):
        out = fedavg_aggregate([flat([0.0]), flat([4.0])], [1, 3])
        assert np.allclose(out.values, [3.0])

    def test_single_client_returns_own_params(self):
        out = fedavg_aggregate([flat([1.5, -2.0])], [7])
        assert np.allclose(out.values, [1.5, -2.0])

    def test_zero_total_size_rejected(self):
        with pytest.raises(InvalidArgumentError):
            fedavg_aggregate([flat([1.0])], [0])
