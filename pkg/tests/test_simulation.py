import numpy as np
import pytest
from scipy import special

from flmtest.fda import inner_product
from flmtest.numerics import RngStream
from flmtest.simulation import (
    ExperimentPlan,
    ProcessSpec,
    SlopeSpec,
    bias_term,
    make_theta_g,
    make_theta_kl,
    run_experiment,
    simulate_design,
    zeta,
)

BROWNIAN = ProcessSpec.brownian()
SMALL = ProcessSpec.brownian(n_terms=100, n_points=200)


class TestProcess:
    def test_brownian_eigenpairs(self):
        assert BROWNIAN.eigenvalues[0] == pytest.approx(1 / (0.25 * np.pi**2), rel=1e-15)
        assert BROWNIAN.truncation == 100 and BROWNIAN.grid.size == 1000
        G = (BROWNIAN.eigenfunctions * BROWNIAN.grid.weights) @ BROWNIAN.eigenfunctions.T
        np.testing.assert_allclose(G, np.eye(100), atol=1e-4)

    def test_curves_start_at_zero(self):
        X = simulate_design(BROWNIAN, 5, RngStream(1))
        assert np.all(X[:, 0] == 0.0)

    def test_score_variance_and_correlation(self):
        X = simulate_design(BROWNIAN, 5000, RngStream(2))
        s1 = inner_product(X, BROWNIAN.eigenfunctions[0], BROWNIAN.grid)
        s2 = inner_product(X, BROWNIAN.eigenfunctions[1], BROWNIAN.grid)
        lam1 = BROWNIAN.eigenvalues[0]
        assert abs(s1.var() - lam1) <= 4 * lam1 * np.sqrt(2 / 5000)
        assert abs(np.corrcoef(s1, s2)[0, 1]) < 0.05

    def test_invalid_eigenvalues(self):
        with pytest.raises(ValueError):
            ProcessSpec(np.array([1.0, 2.0]), np.ones((2, 5)), BROWNIAN.grid.__class__.uniform(5))

    def test_from_functions(self):
        g = BROWNIAN.grid.__class__.uniform(101)
        proc = ProcessSpec.from_functions([1.0, 0.5], [lambda t: np.ones_like(t), lambda t: t], g)
        assert proc.truncation == 2 and proc.kind == "custom"


class TestZeta:
    @pytest.mark.parametrize("s", [1.2, 2.0, 3.0, 6.5])
    def test_matches_scipy(self, s):
        assert zeta(s) == pytest.approx(special.zeta(s), rel=1e-12)

    def test_divergent(self):
        with pytest.raises(ValueError):
            zeta(1.0)


class TestSlopes:
    def test_zero_amplitude(self):
        np.testing.assert_array_equal(make_theta_kl(0.0, 1.0, BROWNIAN), 0.0)

    def test_series_normalization_norm(self):
        # direct summation: truncated sum over the full series
        j = np.arange(1, 101)
        for xi in (1.0, 0.1):
            theta = make_theta_kl(1.0, xi, BROWNIAN, normalization="series")
            expected = np.sqrt(np.sum(j ** (-2 * xi - 1.0)) / special.zeta(2 * xi + 1))
            assert np.sqrt(inner_product(theta, theta, BROWNIAN.grid)) == pytest.approx(expected, abs=2e-4)
        assert expected == pytest.approx(0.8027, abs=1e-4)

    def test_default_normalization_gives_norm_B(self):
        for xi in (0.1, 0.5, 1.0):
            theta = make_theta_kl(0.7, xi, BROWNIAN)
            assert np.sqrt(inner_product(theta, theta, BROWNIAN.grid)) == pytest.approx(0.7, abs=2e-4)

    def test_kl_coefficients(self):
        theta = make_theta_kl(1.0, 0.5, BROWNIAN)
        coef = inner_product(BROWNIAN.eigenfunctions, theta, BROWNIAN.grid)
        j = np.arange(1, 101)
        analytic = j**-1.0 / np.sqrt(np.sum(j**-2.0))
        np.testing.assert_allclose(coef, analytic, atol=1e-4)

    def test_unknown_normalization(self):
        with pytest.raises(ValueError):
            make_theta_kl(1.0, 1.0, BROWNIAN, normalization="unit")

    def test_gaussian_bump_norm(self):
        theta = make_theta_g(1.0, 0.05, BROWNIAN.grid)
        assert np.sqrt(inner_product(theta, theta, BROWNIAN.grid)) == pytest.approx(1.0, abs=1e-6)

    def test_gaussian_bump_symmetry(self):
        theta = make_theta_g(2.0, 0.02, BROWNIAN.grid)
        np.testing.assert_array_equal(theta, theta[::-1])

    def test_narrow_bump_is_taller(self):
        g = BROWNIAN.grid
        assert make_theta_g(1.0, 0.01, g).max() > make_theta_g(1.0, 0.05, g).max()

    @pytest.mark.parametrize(
        "kwargs", [dict(family="theta_kl", B=1.0), dict(family="theta_g", B=1.0), dict(family="other"), dict(B=-1.0)]
    )
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValueError):
            SlopeSpec(**kwargs)


class TestBias:
    def test_beyond_truncation(self):
        assert bias_term(BROWNIAN, SlopeSpec.theta_kl(1.0, 1.0), 100) == 0.0

    def test_full_energy(self):
        slope = SlopeSpec.theta_kl(1.0, 1.0)
        coef = slope.coefficients(BROWNIAN)
        assert bias_term(BROWNIAN, slope, 0) == pytest.approx(np.sum(BROWNIAN.eigenvalues * coef**2), rel=1e-14)

    def test_closed_form(self):
        B, xi, k = 1.0, 1.0, 4
        j = np.arange(k + 1, 101)
        series = np.sum(np.arange(1, 10**6 + 1, dtype=float) ** (-2 * xi - 1))
        closed = B**2 / (np.pi**2 * series) * np.sum((j - 0.5) ** -2.0 * j ** (-2 * xi - 1))
        slope = SlopeSpec.theta_kl(B, xi, normalization="series")
        assert bias_term(BROWNIAN, slope, k) == pytest.approx(closed, rel=1e-10)

    def test_signal_energy_matches_simulation(self):
        slope = SlopeSpec.theta_kl(1.0, 1.0)
        theta = slope.on_grid(BROWNIAN)
        X = simulate_design(BROWNIAN, 10**4, RngStream(4))
        empirical = inner_product(X, theta, BROWNIAN.grid).var()
        assert empirical == pytest.approx(bias_term(BROWNIAN, slope, 0), rel=0.05)

    def test_gaussian_bump_coefficients(self):
        slope = SlopeSpec.theta_g(1.0, 0.05)
        assert 0 < bias_term(BROWNIAN, slope, 3) < bias_term(BROWNIAN, slope, 0)


class TestRunner:
    def test_deterministic(self):
        plan = ExperimentPlan(SMALL, SlopeSpec.theta_kl(0.5, 1.0), n=40, trials=12, mc_replicates=200, seed=3)
        a, b = run_experiment(plan), run_experiment(plan)
        np.testing.assert_array_equal(a.decisions, b.decisions)
        assert a.rejections == b.rejections

    def test_threads_do_not_change_counts(self):
        plan = ExperimentPlan(SMALL, SlopeSpec.theta_g(1.0, 0.05), n=40, trials=10, mc_replicates=200, seed=4)
        np.testing.assert_array_equal(run_experiment(plan, threads=1).decisions, run_experiment(plan, threads=3).decisions)

    def test_single_trial(self):
        plan = ExperimentPlan(SMALL, SlopeSpec.zero(), n=20, trials=1, mc_replicates=100, seed=5)
        res = run_experiment(plan)
        for m in res.methods:
            assert res.percentage(m) in (0.0, 100.0)
            assert res.ci_half_width(m) == 0.0

    def test_ci_formula(self):
        plan = ExperimentPlan(SMALL, SlopeSpec.theta_kl(1.0, 1.0), n=40, trials=20, methods=("P1",), seed=6)
        res = run_experiment(plan)
        p = res.rejections["P1"] / 20
        assert res.ci_half_width("P1") == pytest.approx(100 * 1.96 * np.sqrt(p * (1 - p) / 20))
        assert 0 <= res.percentage("P1") <= 100

    def test_power_grows_with_amplitude(self):
        rates = []
        for B in (0.1, 0.5, 1.0):
            plan = ExperimentPlan(SMALL, SlopeSpec.theta_kl(B, 1.0), n=60, trials=150, methods=("P1",), seed=7)
            rates.append(run_experiment(plan).percentage("P1"))
        se = 100 * np.sqrt(0.25 / 150)
        assert rates[0] <= rates[1] + 2 * se and rates[1] <= rates[2] + 2 * se
        assert rates[2] > 80

    def test_failing_trial_names_its_index(self, monkeypatch):
        import flmtest.simulation as sim

        def boom(*args, **kwargs):
            raise FloatingPointError("synthetic")

        monkeypatch.setattr(sim, "fpca", boom)
        plan = ExperimentPlan(SMALL, SlopeSpec.zero(), n=20, trials=2, methods=("P1",), seed=8)
        with pytest.raises(RuntimeError, match="trial 0"):
            run_experiment(plan)

    @pytest.mark.parametrize(
        "kwargs", [dict(trials=0), dict(n=3), dict(noise_sd=0.0), dict(methods=("P3",)), dict(methods=())]
    )
    def test_invalid_plans(self, kwargs):
        base = dict(process=SMALL, slope=SlopeSpec.zero(), n=20, trials=5)
        base.update(kwargs)
        with pytest.raises(ValueError):
            ExperimentPlan(**base)

    def test_describe_is_plain_data(self):
        import json

        plan = ExperimentPlan(SMALL, SlopeSpec.theta_g(1.0, 0.02), n=30, trials=3)
        d = plan.describe()
        assert json.loads(json.dumps(d)) == d
        assert d["slope"]["tau"] == 0.02
