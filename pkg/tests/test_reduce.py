from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import brentq, minimize

from topikit.reduce import (
    FuzzySets,
    KnnGraph,
    LayoutParams,
    ReduceConfig,
    ReduceError,
    build_knn_graph,
    fit_layout_params,
    fuzzy_union,
    optimize_layout,
    reduce,
    smooth_knn,
)

from helpers import make_blobs, planar_blobs
from oracles import brute_force_knn, trustworthiness


class TestKnnGraph:
    def test_collinear_points(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0]])
        g = build_knn_graph(X, k=2, metric="euclidean")
        assert list(g.neighbors[0]) == [1, 2]
        assert list(g.distances[0]) == [1.0, 2.0]
        assert list(g.neighbors[3]) == [2, 1]

    def test_no_self_neighbors(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 4))
        g = build_knn_graph(X, k=5, metric="euclidean")
        for i in range(30):
            assert i not in g.neighbors[i]

    def test_matches_brute_force_oracle_exactly(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((100, 10))
        for metric in ("euclidean", "cosine"):
            g = build_knn_graph(X, k=15, metric=metric)
            nbrs, dists = brute_force_knn(X, 15, metric)
            assert np.array_equal(g.neighbors, nbrs)
            np.testing.assert_allclose(g.distances, dists, atol=1e-12)

    def test_distances_sorted_ascending(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((50, 3))
        g = build_knn_graph(X, k=10, metric="cosine")
        assert (np.diff(g.distances, axis=1) >= -1e-15).all()

    def test_too_few_points_error(self):
        with pytest.raises(ReduceError, match="more points"):
            build_knn_graph(np.zeros((3, 2)), k=3, metric="euclidean")


class TestSmoothKnn:
    def test_bisection_matches_scalar_solver(self):
        # independent oracle: brentq on 1 + e^(-1/s) + e^(-2/s) = log2(3)
        target = np.log2(3)
        sigma_oracle = brentq(
            lambda s: 1.0 + np.exp(-1.0 / s) + np.exp(-2.0 / s) - target,
            1e-6,
            100.0,
            xtol=1e-12,
        )
        assert sigma_oracle == pytest.approx(1.133193, abs=1e-5)

        g = KnnGraph(
            k=3,
            neighbors=np.array([[1, 2, 3]], dtype=np.int32),
            distances=np.array([[1.0, 2.0, 3.0]]),
        )
        f = smooth_knn(g)
        assert f.rho[0] == 1.0
        assert f.sigma[0] == pytest.approx(sigma_oracle, abs=1e-4)

    def test_nearest_neighbor_membership_is_one(self):
        g = KnnGraph(
            k=3,
            neighbors=np.array([[1, 2, 3]], dtype=np.int32),
            distances=np.array([[0.5, 1.5, 2.0]]),
        )
        f = smooth_knn(g)
        assert f.memberships[0, 0] == pytest.approx(1.0)

    def test_row_sums_calibrated_on_random_rows(self):
        rng = np.random.default_rng(11)
        k = 8
        distances = np.sort(rng.uniform(0.1, 5.0, size=(100, k)), axis=1)
        neighbors = np.tile(np.arange(1, k + 1, dtype=np.int32), (100, 1))
        f = smooth_knn(KnnGraph(k=k, neighbors=neighbors, distances=distances))
        sums = f.memberships.sum(axis=1)
        assert np.abs(sums - np.log2(k)).max() < 1e-4

    def test_duplicate_points_clamp_sigma(self, caplog):
        g = KnnGraph(
            k=3,
            neighbors=np.array([[1, 2, 3]], dtype=np.int32),
            distances=np.array([[0.0, 0.0, 0.0]]),
        )
        with caplog.at_level("WARNING"):
            f = smooth_knn(g)
        assert f.sigma[0] == pytest.approx(1e-3)
        assert any("degenerate" in r.message for r in caplog.records)


class TestFuzzyUnion:
    def _graph(self, w_ij, w_ji):
        g = KnnGraph(
            k=1,
            neighbors=np.array([[1], [0]], dtype=np.int32),
            distances=np.array([[1.0], [1.0]]),
        )
        f = FuzzySets(
            rho=np.zeros(2),
            sigma=np.ones(2),
            memberships=np.array([[w_ij], [w_ji]]),
        )
        return fuzzy_union(f, g)

    def test_half_half(self):
        fg = self._graph(0.5, 0.5)
        assert fg.weights[0, 1] == pytest.approx(0.75)

    def test_one_zero(self):
        fg = self._graph(1.0, 1e-30)
        assert fg.weights[0, 1] == pytest.approx(1.0)

    def test_symmetric_for_random_inputs(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((40, 6))
        g = build_knn_graph(X, k=6, metric="euclidean")
        fg = fuzzy_union(smooth_knn(g), g)
        diff = (fg.weights - fg.weights.T).toarray()
        assert np.abs(diff).max() == 0.0

    def test_zero_diagonal_and_unit_interval(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((30, 4))
        g = build_knn_graph(X, k=5, metric="euclidean")
        fg = fuzzy_union(smooth_knn(g), g)
        dense = fg.weights.toarray()
        assert np.diag(dense).max() == 0.0
        vals = dense[dense > 0]
        assert (vals <= 1.0).all()

    def test_triplet_debug_dump(self, tmp_path):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((12, 3))
        g = build_knn_graph(X, k=3, metric="euclidean")
        fg = fuzzy_union(smooth_knn(g), g)
        path = tmp_path / "graph.txt"
        fg.to_triplets(path)
        rows = [line.split() for line in path.read_text().splitlines()]
        assert len(rows) == fg.weights.nnz
        i, j, w = rows[0]
        assert fg.weights[int(i), int(j)] == pytest.approx(float(w))


class TestFitLayoutParams:
    def test_reference_point_one(self):
        a, b = fit_layout_params(0.1, 1.0)
        assert a == pytest.approx(1.577, abs=0.01)
        assert b == pytest.approx(0.895, abs=0.01)

    def test_repo_default_golden_values(self):
        # golden values frozen from an independent least-squares run
        a, b = fit_layout_params(0.0, 1.0)
        assert a == pytest.approx(1.932808, abs=1e-3)
        assert b == pytest.approx(0.790495, abs=1e-3)

    def test_phi_at_zero_is_one(self):
        a, b = fit_layout_params(0.25, 1.5)
        assert 1.0 / (1.0 + a * 0.0 ** (2 * b)) == 1.0

    def test_matches_independent_nelder_mead_oracle(self):
        min_dist, spread = 0.1, 1.0
        xv = np.linspace(0, 3 * spread, 300)
        yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))

        def loss(p):
            a, b = p
            if a <= 0 or b <= 0:
                return 1e9
            return float(np.sum((1.0 / (1.0 + a * xv ** (2 * b)) - yv) ** 2))

        oracle = minimize(loss, x0=[1.0, 1.0], method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-14})
        a, b = fit_layout_params(min_dist, spread)
        assert a == pytest.approx(oracle.x[0], abs=1e-3)
        assert b == pytest.approx(oracle.x[1], abs=1e-3)

    def test_invalid_inputs(self):
        with pytest.raises(ReduceError):
            fit_layout_params(0.1, 0.0)
        with pytest.raises(ReduceError):
            fit_layout_params(5.0, 1.0)


def _two_blob_data(seed=0):
    centers = np.zeros((2, 10))
    centers[1, 0] = 3.2  # 10x the intra-blob spread (sigma 0.1 over 10 dims)
    return make_blobs(centers, per_blob=50, sigma=0.1, seed=seed)


class TestOptimizeLayout:
    def test_blob_separation_in_2d(self):
        X, labels = _two_blob_data()
        config = ReduceConfig(
            n_neighbors=15,
            metric="euclidean",
            layout=LayoutParams(n_components=2, seed=4),
        )
        Y = reduce(X, config)
        a, b = Y[labels == 0], Y[labels == 1]
        intra = max(
            np.linalg.norm(a[:, None] - a[None], axis=2).max(),
            np.linalg.norm(b[:, None] - b[None], axis=2).max(),
        )
        inter = np.linalg.norm(a[:, None] - b[None], axis=2).min()
        assert inter > intra

    def test_seeded_determinism_bit_identical(self):
        X, _ = _two_blob_data()
        config = ReduceConfig(
            n_neighbors=10,
            metric="euclidean",
            layout=LayoutParams(n_components=2, seed=123),
        )
        y1 = reduce(X, config)
        y2 = reduce(X, config)
        assert y1.tobytes() == y2.tobytes()

    def test_trustworthiness_on_planar_blobs(self):
        # Blobs with intrinsic 2-D structure: a 2-D layout can genuinely
        # preserve rank-15 neighborhoods (full-rank isotropic 10-D blobs
        # cap near T=0.93 for any 2-D embedding, t-SNE included).
        X, _ = planar_blobs()
        config = ReduceConfig(
            n_neighbors=15,
            metric="euclidean",
            layout=LayoutParams(n_components=2, seed=4),
        )
        Y = reduce(X, config)
        assert trustworthiness(X, Y, k=15) >= 0.95

    def test_trustworthiness_at_default_components(self):
        # Isotropic 3-blob data at the pipeline's default 5 components.
        centers = np.eye(3, 10)
        X, _ = make_blobs(centers, per_blob=100, sigma=0.05, seed=42)
        Y = reduce(
            X,
            ReduceConfig(
                n_neighbors=15,
                metric="euclidean",
                layout=LayoutParams(n_components=5, seed=1),
            ),
        )
        assert trustworthiness(X, Y, k=15) >= 0.95

    def test_connected_graph_single_component_path(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((60, 5))
        config = ReduceConfig(
            n_neighbors=10,
            metric="euclidean",
            layout=LayoutParams(n_components=2, seed=1, epochs=50),
        )
        Y = reduce(X, config)
        assert Y.shape == (60, 2)
        assert np.isfinite(Y).all()

    def test_empty_graph_rejected(self):
        from scipy import sparse

        from topikit.reduce import FuzzyGraph

        with pytest.raises(ReduceError):
            optimize_layout(
                FuzzyGraph(weights=sparse.csr_matrix((0, 0))), LayoutParams()
            )


class TestReduceComposition:
    def test_shape_contract_five_components(self):
        centers = np.eye(3, 10)
        X, _ = make_blobs(centers, per_blob=100, sigma=0.05, seed=2)
        Y = reduce(X, ReduceConfig(metric="euclidean", layout=LayoutParams(seed=0)))
        assert Y.shape == (300, 5)
        assert np.isfinite(Y).all()

    def test_two_components_for_map(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((40, 16))
        config = ReduceConfig(
            n_neighbors=8,
            layout=LayoutParams(n_components=2, seed=0, epochs=50),
        )
        Y = reduce(X, config)
        assert Y.shape == (40, 2)

    def test_multi_worker_mode_runs(self):
        # lock-free parallel updates: valid output, no determinism promise
        rng = np.random.default_rng(11)
        X = rng.standard_normal((60, 8))
        config = ReduceConfig(
            n_neighbors=8,
            layout=LayoutParams(n_components=2, seed=0, epochs=30, workers=2),
        )
        Y = reduce(X, config)
        assert Y.shape == (60, 2)
        assert np.isfinite(Y).all()
