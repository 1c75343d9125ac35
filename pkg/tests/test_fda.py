import numpy as np
import pytest

from flmtest.fda import (
    FunctionalSample,
    Grid,
    center_sample,
    fpca,
    inner_product,
)
from flmtest.numerics import RngStream
from flmtest.simulation import ProcessSpec, simulate_design


def random_sample(n, p, seed, irregular=False):
    rng = np.random.default_rng(seed)
    if irregular:
        pts = np.sort(rng.uniform(0, 1, p))
        pts[0], pts[-1] = 0.0, 1.0
        pts = np.unique(pts)
        grid = Grid(pts)
    else:
        grid = Grid.uniform(p)
    curves = rng.standard_normal((n, grid.size)).cumsum(axis=1) / np.sqrt(grid.size)
    return FunctionalSample(grid, curves, rng.standard_normal(n))


def dense_oracle(sample):
    # brute force: eigenpairs of W^{1/2} C W^{1/2} with C the plain covariance matrix
    X, w = sample.curves, sample.grid.weights
    n = X.shape[0]
    root = np.sqrt(w)
    S = (X * root).T @ (X * root) / n
    vals, vecs = np.linalg.eigh(S)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    funcs = (vecs / root[:, None]).T
    return vals, funcs


def align(f, g, w):
    s = np.sign(np.sum(f * g * w, axis=1))
    return g * s[:, None]


class TestGrid:
    def test_weights_sum_to_length(self):
        g = Grid(np.array([0.0, 0.1, 0.35, 0.4, 1.0]))
        assert abs(g.weights.sum() - 1.0) < 1e-12
        assert np.all(g.weights > 0)

    def test_uniform_grid_is_symmetric(self):
        for size in (1000, 7):
            g = Grid.uniform(size)
            d = g.points - 0.5
            np.testing.assert_array_equal(d, -d[::-1])
            np.testing.assert_allclose(np.diff(g.points), 1 / (size - 1), rtol=1e-12)
        assert g.points[0] == 0.0 and g.points[-1] == 1.0
        np.testing.assert_allclose(g.weights, np.r_[0.5, np.ones(size - 2), 0.5] / (size - 1), rtol=1e-12)

    @pytest.mark.parametrize("pts", [[0.0], [0.0, 0.0, 1.0], [0.0, np.nan], [1.0, 0.5]])
    def test_invalid(self, pts):
        with pytest.raises(ValueError):
            Grid(np.array(pts))


class TestInnerProduct:
    def test_constant(self):
        g = Grid.uniform(50)
        assert inner_product(np.ones(50), np.ones(50), g) == pytest.approx(1.0, abs=1e-14)

    def test_brownian_eigenfunctions_orthogonal(self):
        proc = ProcessSpec.brownian(n_terms=2, n_points=1000)
        v1, v2 = proc.eigenfunctions
        assert abs(inner_product(v1, v2, proc.grid)) < 1e-4
        assert abs(inner_product(v1, v1, proc.grid) - 1) < 1e-4

    def test_positive_and_symmetric(self):
        g = Grid.uniform(40)
        rng = np.random.default_rng(0)
        f, h = rng.standard_normal((2, 40))
        assert inner_product(f, f, g) >= 0
        assert inner_product(f, h, g) == inner_product(h, f, g)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            inner_product(np.ones(3), np.ones(4), Grid.uniform(4))


class TestSample:
    def test_needs_four_observations(self):
        with pytest.raises(ValueError):
            FunctionalSample(Grid.uniform(5), np.ones((3, 5)), np.ones(3))

    def test_rejects_nan(self):
        curves = np.ones((5, 4))
        curves[2, 1] = np.nan
        with pytest.raises(ValueError):
            FunctionalSample(Grid.uniform(4), curves, np.ones(5))

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            FunctionalSample(Grid.uniform(4), np.ones((5, 6)), np.ones(5))


class TestCentering:
    def test_means_vanish(self):
        s = center_sample(random_sample(20, 15, 1))
        np.testing.assert_allclose(s.curves.mean(axis=0), 0, atol=1e-12)
        assert abs(s.responses.mean()) < 1e-12

    def test_idempotent(self):
        s = center_sample(random_sample(12, 9, 2))
        t = center_sample(s)
        np.testing.assert_allclose(t.curves, s.curves, atol=1e-14)
        np.testing.assert_allclose(t.responses, s.responses, atol=1e-14)

    def test_constant_curves_vanish(self):
        g = Grid.uniform(6)
        s = center_sample(FunctionalSample(g, np.tile(np.arange(6.0), (5, 1)), np.arange(5.0)))
        np.testing.assert_array_equal(s.curves, 0.0)


class TestFpca:
    def test_rank_one(self):
        g = Grid.uniform(30)
        c = np.sin(3 * g.points) + 0.2
        s = FunctionalSample(g, np.tile(c, (7, 1)), np.zeros(7))
        res = fpca(s)
        norm_sq = inner_product(c, c, g)
        assert res.rank == 1
        assert res.eigenvalues[0] == pytest.approx(norm_sq, rel=1e-12)
        np.testing.assert_allclose(np.abs(res.eigenfunctions[0]), np.abs(c) / np.sqrt(norm_sq), atol=1e-10)

    def test_small_instance_matches_dense_oracle(self):
        s = random_sample(8, 12, 3)
        res = fpca(s)
        vals, funcs = dense_oracle(s)
        r = res.rank
        np.testing.assert_allclose(res.eigenvalues, vals[:r], atol=1e-8)
        w = s.grid.weights
        np.testing.assert_allclose(res.eigenfunctions, align(res.eigenfunctions, funcs[:r], w), atol=1e-6)

    @pytest.mark.parametrize("seed", range(6))
    def test_routes_agree(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, p = rng.integers(4, 31, size=2)
        s = random_sample(int(n), int(p), seed, irregular=bool(seed % 2))
        a = fpca(s, method="gram")
        b = fpca(s, method="covariance")
        r = min(a.rank, b.rank)
        np.testing.assert_allclose(a.eigenvalues[:r], b.eigenvalues[:r], atol=1e-8)
        np.testing.assert_allclose(a.eigenfunctions[:r], b.eigenfunctions[:r], atol=1e-6)

    def test_invariants(self):
        s = random_sample(25, 60, 4)
        res = fpca(s)
        w = s.grid.weights
        G = (res.eigenfunctions * w) @ res.eigenfunctions.T
        np.testing.assert_allclose(G, np.eye(res.rank), atol=1e-8)
        assert res.eigenvalues.sum() == pytest.approx(res.total_variance, abs=1e-8)
        assert np.all(np.diff(res.eigenvalues) <= 0)
        direct = inner_product(s.curves[:, None, :], res.eigenfunctions[None, :, :], s.grid)
        np.testing.assert_allclose(res.scores, direct, atol=1e-10)

    def test_scale_equivariance(self):
        s = random_sample(10, 40, 5)
        a = fpca(s)
        b = fpca(FunctionalSample(s.grid, 3.0 * s.curves, s.responses))
        np.testing.assert_allclose(b.eigenvalues, 9.0 * a.eigenvalues, rtol=1e-10)
        np.testing.assert_allclose(b.eigenfunctions, a.eigenfunctions, atol=1e-8)

    def test_sign_convention(self):
        res = fpca(random_sample(15, 50, 6))
        w = res.grid.weights
        idx = np.argmax(np.abs(res.eigenfunctions) * np.sqrt(w), axis=1)
        assert np.all(res.eigenfunctions[np.arange(res.rank), idx] > 0)

    def test_max_components(self):
        s = random_sample(20, 50, 7)
        full = fpca(s)
        part = fpca(s, max_components=3)
        assert part.n_components == 3 and part.rank == full.rank
        np.testing.assert_allclose(part.eigenvalues, full.eigenvalues[:3], rtol=1e-12)
        with pytest.raises(ValueError):
            fpca(s, max_components=21)

    def test_zero_curves_have_rank_zero(self):
        s = FunctionalSample(Grid.uniform(8), np.zeros((5, 8)), np.ones(5))
        res = fpca(s)
        assert res.rank == 0 and res.n_components == 0
        assert res.scores.shape == (5, 0)

    def test_brownian_first_eigenvalue(self):
        proc = ProcessSpec.brownian()
        X = simulate_design(proc, 500, RngStream(77))
        res = fpca(FunctionalSample(proc.grid, X, np.zeros(500)), max_components=4)
        assert 0.32 <= res.eigenvalues[0] <= 0.50

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            fpca(random_sample(5, 5, 0), method="svd")
