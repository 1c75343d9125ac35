import numpy as np
import pytest
from scipy import stats

from flmtest.fda import FunctionalSample, Grid, fpca
from flmtest.flm import (
    akdelta_norm,
    build_projection,
    orthonormal_basis,
    parametric_test,
    phi_statistic,
)
from flmtest.numerics import RngStream, sample_standard_normal
from flmtest.simulation import ProcessSpec, simulate_design


def make_sample(n, p, seed, responses=None):
    rng = np.random.default_rng(seed)
    grid = Grid.uniform(p)
    curves = rng.standard_normal((n, p)).cumsum(axis=1) / np.sqrt(p)
    y = rng.standard_normal(n) if responses is None else responses
    return FunctionalSample(grid, curves, y)


def hat_matrix_phi(W, y):
    # dense least-squares oracle with a pseudo-inverse hat matrix
    H = W @ np.linalg.pinv(W.T @ W) @ W.T
    fit = H @ y
    d = np.linalg.matrix_rank(W)
    return fit @ fit / (np.sum((y - fit) ** 2) / (len(y) - d))


class TestProjection:
    def test_rank_one_sample_caps_dimension(self):
        g = Grid.uniform(20)
        c = np.cos(2 * g.points)
        s = FunctionalSample(g, np.outer(np.arange(1.0, 11.0), c), np.zeros(10))
        ctx = build_projection(fpca(s), 4)
        assert ctx.k_effective == 1 and ctx.df_num == 1 and ctx.df_den == 9

    def test_orthonormal_and_idempotent(self):
        s = make_sample(30, 40, 1)
        ctx = build_projection(fpca(s), 6)
        Q = ctx.basis_Q
        np.testing.assert_allclose(Q.T @ Q, np.eye(6), atol=1e-10)
        y = s.responses
        np.testing.assert_allclose(ctx.project(ctx.project(y)), ctx.project(y), atol=1e-10)

    def test_span_contains_score_columns(self):
        s = make_sample(25, 30, 2)
        f = fpca(s)
        ctx = build_projection(f, 5)
        W = f.scores[:, :5]
        resid = W - ctx.project(W)
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(W)

    def test_gram_schmidt_oracle(self):
        # orthogonal columns: the basis is the normalized columns up to sign
        W = np.array(
            [[1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [0.0, 0.0, 0.0]]
        ) * np.array([2.0, 0.5, 3.0])
        Q = orthonormal_basis(W)
        expected = W / np.linalg.norm(W, axis=0)
        # pivoting may reorder columns; match each expected column to one basis column
        M = np.abs(expected.T @ Q)
        np.testing.assert_allclose(np.sort(M, axis=1)[:, -1], 1.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(Q.T @ Q), np.eye(3), atol=1e-12)

    def test_dependent_columns_are_dropped(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((12, 2))
        W = np.column_stack([a, a @ [1.0, -2.0]])
        assert orthonormal_basis(W).shape == (12, 2)

    def test_k_above_half_n(self):
        s = make_sample(10, 20, 4)
        with pytest.raises(ValueError):
            build_projection(fpca(s), 6)


class TestStatistic:
    def test_orthogonal_response_gives_zero(self):
        s = make_sample(20, 25, 5)
        ctx = build_projection(fpca(s), 3)
        y = s.responses - ctx.project(s.responses)
        assert phi_statistic(ctx, y) == pytest.approx(0.0, abs=1e-20)

    def test_homogeneous_of_degree_zero(self):
        s = make_sample(20, 25, 6)
        ctx = build_projection(fpca(s), 3)
        y = s.responses
        assert phi_statistic(ctx, 2 * y) == pytest.approx(phi_statistic(ctx, y), rel=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_hat_matrix_oracle(self, seed):
        s = make_sample(20, 35, 10 + seed)
        f = fpca(s)
        ctx = build_projection(f, 3)
        expected = hat_matrix_phi(f.scores[:, :3], s.responses)
        assert phi_statistic(ctx, s.responses) == pytest.approx(expected, rel=1e-9)

    def test_invariant_to_eigenfunction_signs(self):
        import dataclasses

        s = make_sample(25, 30, 17)
        f = fpca(s)
        flip = np.where(np.arange(f.n_components) % 2, -1.0, 1.0)
        g = dataclasses.replace(
            f, eigenfunctions=f.eigenfunctions * flip[:, None], scores=f.scores * flip
        )
        for k in (1, 3, 6):
            a = phi_statistic(build_projection(f, k), s.responses)
            b = phi_statistic(build_projection(g, k), s.responses)
            assert b == pytest.approx(a, rel=1e-12)

    def test_matrix_of_responses(self):
        s = make_sample(24, 30, 7)
        ctx = build_projection(fpca(s), 4)
        Y = np.random.default_rng(0).standard_normal((24, 5))
        batch = phi_statistic(ctx, Y)
        single = [phi_statistic(ctx, Y[:, j]) for j in range(5)]
        np.testing.assert_allclose(batch, single, rtol=1e-12)

    def test_exact_fit_is_flagged(self):
        s = make_sample(16, 20, 8)
        f = fpca(s)
        y = f.scores[:, 0] * 2.0 - f.scores[:, 1]
        res = parametric_test(s.with_responses(y), f, 2)
        assert res.degenerate and res.reject and res.p_value == 0.0
        assert res.statistic == np.inf

    def test_zero_response(self):
        s = make_sample(16, 20, 9, responses=np.zeros(16))
        res = parametric_test(s, fpca(s), 2)
        assert res.statistic == 0.0 and not res.reject and not res.degenerate
        assert res.p_value == 1.0


class TestParametricTest:
    def test_decision_rule_and_p_value_agree(self):
        for seed in range(20):
            s = make_sample(30, 30, 100 + seed)
            res = parametric_test(s, fpca(s), 4, alpha=0.2)
            assert res.reject == (res.statistic - res.threshold > 0)
            assert 0.0 <= res.p_value <= 1.0
            if abs(res.p_value - 0.2) > 1e-9:
                assert res.reject == (res.p_value < 0.2)

    def test_threshold_is_k_times_fisher_quantile(self):
        s = make_sample(40, 30, 11)
        res = parametric_test(s, fpca(s), 8, alpha=0.05)
        assert res.threshold == pytest.approx(8 * stats.f.isf(0.05, 8, 32), rel=1e-9)

    def test_threshold_decreases_with_alpha(self):
        s = make_sample(40, 30, 12)
        f = fpca(s)
        t = [parametric_test(s, f, 4, alpha=a).threshold for a in (0.01, 0.05, 0.1, 0.3)]
        assert all(a > b for a, b in zip(t, t[1:]))

    def test_decision_invariant_to_rescaling(self):
        for seed in range(10):
            s = make_sample(30, 30, 200 + seed)
            base = parametric_test(s, fpca(s), 4, alpha=0.3).reject
            s_y = s.with_responses(-3.5 * s.responses)
            s_x = FunctionalSample(s.grid, 7.0 * s.curves, s.responses)
            assert parametric_test(s_y, fpca(s_y), 4, alpha=0.3).reject == base
            assert parametric_test(s_x, fpca(s_x), 4, alpha=0.3).reject == base

    def test_rejects_bad_alpha(self):
        s = make_sample(10, 10, 13)
        with pytest.raises(ValueError):
            parametric_test(s, fpca(s), 2, alpha=1.0)

    def test_p_values_uniform_under_null(self):
        # fixed curves, Gaussian noise: Kolmogorov-Smirnov against the uniform law
        proc = ProcessSpec.brownian(n_terms=50, n_points=200)
        X = simulate_design(proc, 40, RngStream(5))
        s = FunctionalSample(proc.grid, X, np.zeros(40))
        ctx = build_projection(fpca(s, max_components=8), 3)
        noise = sample_standard_normal(RngStream(6), 40 * 3000).reshape(3000, 40).T
        pv = stats.f.sf(phi_statistic(ctx, noise) / 3, 3, 37)
        assert stats.kstest(pv, "uniform").pvalue > 0.001


class TestNumeratorIdentity:
    def test_zero_response(self):
        s = make_sample(12, 20, 14, responses=np.zeros(12))
        assert akdelta_norm(fpca(s), s, 3) == 0.0

    def test_random_instance(self):
        s = make_sample(30, 50, 15)
        f = fpca(s)
        ctx = build_projection(f, 5)
        lhs = np.sum(ctx.project(s.responses) ** 2)
        assert akdelta_norm(f, s, 5) == pytest.approx(lhs, rel=1e-8)

    def test_rank_deficient_sample(self):
        rng = np.random.default_rng(16)
        base = rng.standard_normal((3, 40)).cumsum(axis=1)
        curves = np.vstack([base, base, base, base])
        s = FunctionalSample(Grid.uniform(40), curves, rng.standard_normal(12))
        f = fpca(s)
        assert f.rank == 3
        ctx = build_projection(f, 5)
        lhs = np.sum(ctx.project(s.responses) ** 2)
        assert ctx.k_effective == 3
        assert akdelta_norm(f, s, 5) == pytest.approx(lhs, rel=1e-8)
