"""Tilted-family moments, transform inversion and inverse-CDF sampling.

The student-t family doubles as the exactly solvable case: its tilted law
is Gamma((nu+1)/2, nu + c^2), so every operation can be checked against a
closed form.  Laplace checks go against quadrature of the tilted Levy
density, logistic against the alternating-series density.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from augconj.augmentation import (
    BromwichConfig,
    TiltedFamily,
    cumulant,
    kl_omega,
    mean_omega,
    omega_bar,
    sample_tilted,
    sample_tilted_batch,
    tilted_cdf,
    tilted_pdf,
)
from augconj.errors import ConstraintError, DomainError, SamplingError
from augconj.likelihoods import make_likelihood

from oracles import (
    finite_diff,
    gamma_tilted,
    ks_pvalue_against,
    pg_half_series_density,
    tilted_levy_cdf_at,
)

STUDENT = make_likelihood("student-t", {"nu": 3.0})
LAPLACE = make_likelihood("laplace", {"beta": 1.0})
LOGISTIC = make_likelihood("logistic")
SVM = make_likelihood("bayesian-svm")
MATERN = make_likelihood("matern32", {"rho": 1.0})
ALL = {
    "student-t": STUDENT,
    "laplace": LAPLACE,
    "logistic": LOGISTIC,
    "bayesian-svm": SVM,
    "matern32": MATERN,
}

ANALYTIC_MEAN = {
    "student-t": lambda c: 4.0 / (2.0 * (3.0 + c**2)),
    "laplace": lambda c: 1.0 / (2.0 * c),
    "logistic": lambda c: np.tanh(c / 2.0) / (4.0 * c),
    "bayesian-svm": lambda c: 1.0 / (2.0 * c),
    "matern32": lambda c: 3.0 / (2.0 + 2.0 * np.sqrt(3.0) * c),
}


class TestMoments:
    def test_student_t_mean_example(self):
        assert mean_omega(TiltedFamily(STUDENT, 1.0)) == pytest.approx(0.5, abs=1e-12)

    def test_logistic_limit_at_zero(self):
        assert mean_omega(TiltedFamily(LOGISTIC, 0.0)) == pytest.approx(
            0.125, abs=1e-10
        )

    def test_laplace_mean_example(self):
        assert mean_omega(TiltedFamily(LAPLACE, 1.0)) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("name", list(ALL))
    def test_analytic_mean_on_grid(self, name):
        for c in np.linspace(0.2, 5.0, 20):
            assert mean_omega(TiltedFamily(ALL[name], c)) == pytest.approx(
                ANALYTIC_MEAN[name](c), abs=1e-10
            )

    @pytest.mark.parametrize("name", list(ALL))
    def test_mean_positive_and_matches_log_phi_slope(self, name):
        spec = ALL[name]
        for c in [0.3, 1.0, 2.5]:
            w = mean_omega(TiltedFamily(spec, c))
            assert w > 0
            h = 1e-6 * max(c**2, 1.0)
            slope = -finite_diff(spec.log_phi, c**2, h)
            assert w == pytest.approx(slope, rel=1e-6)

    def test_mean_survives_phi_underflow(self):
        # exp(-sqrt(r)) underflows for r ~ 1e6 yet the ratio is well defined.
        w = mean_omega(TiltedFamily(SVM, 2000.0))
        assert w == pytest.approx(1.0 / 4000.0, rel=1e-6)


class TestKL:
    def test_zero_tilt_smooth_families(self):
        for spec in (STUDENT, LOGISTIC, MATERN):
            assert kl_omega(TiltedFamily(spec, 0.0)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_tilt_guarded_families(self):
        # The singularity guard leaves a ~1e-5-size remnant at c = 0.
        for spec in (LAPLACE, SVM):
            val = kl_omega(TiltedFamily(spec, 0.0))
            assert 0.0 <= val < 1e-4

    def test_student_t_example(self):
        expected = -0.5 + 2.0 * math.log(4.0 / 3.0)
        assert kl_omega(TiltedFamily(STUDENT, 1.0)) == pytest.approx(
            expected, abs=1e-12
        )

    def test_logistic_example(self):
        expected = -4.0 * math.tanh(1.0) / 8.0 + math.log(math.cosh(1.0))
        assert kl_omega(TiltedFamily(LOGISTIC, 2.0)) == pytest.approx(
            expected, abs=1e-12
        )

    @pytest.mark.parametrize("name", list(ALL))
    def test_nonnegative_on_grid(self, name):
        for c in np.linspace(0.0, 6.0, 25):
            assert kl_omega(TiltedFamily(ALL[name], c)) >= -1e-10


class TestCumulants:
    def test_first_equals_mean(self):
        fam = TiltedFamily(STUDENT, 1.3)
        assert cumulant(fam, 1) == mean_omega(fam)

    def test_student_t_variance_at_zero(self):
        assert cumulant(TiltedFamily(STUDENT, 0.0), 2) == pytest.approx(
            2.0 / 9.0, abs=1e-12
        )

    @pytest.mark.parametrize("name", list(ALL))
    def test_variance_nonnegative(self, name):
        assert cumulant(TiltedFamily(ALL[name], 1.0), 2) >= 0.0

    def test_unsupported_order(self):
        with pytest.raises(DomainError):
            cumulant(TiltedFamily(STUDENT, 1.0), 3)

    def test_fallback_matches_analytic_curvature(self):
        import dataclasses

        stripped = dataclasses.replace(STUDENT, log_phi_curv=None)
        direct = cumulant(TiltedFamily(STUDENT, 1.2), 2)
        fallback = cumulant(TiltedFamily(stripped, 1.2), 2)
        assert fallback == pytest.approx(direct, rel=1e-5)


class TestTransformOracle:
    @pytest.mark.parametrize("nu", [2.0, 3.0, 10.0])
    @pytest.mark.parametrize("c", [0.0, 1.0, 3.0])
    def test_student_t_matches_gamma(self, nu, c):
        spec = make_likelihood("student-t", {"nu": nu})
        fam = TiltedFamily(spec, c)
        law = gamma_tilted(nu, c)
        assert mean_omega(fam) == pytest.approx(law.mean(), abs=1e-10)
        assert cumulant(fam, 2) == pytest.approx(law.var(), abs=1e-10)
        x = np.linspace(law.ppf(0.001), law.ppf(0.999), 50)
        np.testing.assert_allclose(tilted_cdf(fam, x), law.cdf(x), atol=1e-4)
        np.testing.assert_allclose(tilted_pdf(fam, x), law.pdf(x), atol=1e-4)

    def test_cdf_pdf_frozen_examples(self):
        fam = TiltedFamily(STUDENT, 0.0)
        assert tilted_cdf(fam, 2.0 / 3.0) == pytest.approx(
            1.0 - 3.0 * math.exp(-2.0), abs=1e-6
        )
        assert tilted_pdf(fam, 1.0 / 3.0) == pytest.approx(
            3.0 / math.e, abs=1e-6
        )

    @pytest.mark.parametrize("name", list(ALL))
    def test_cdf_far_tail_reaches_one(self, name):
        fam = TiltedFamily(ALL[name], 1.0)
        far = 1e4 * mean_omega(fam)
        assert tilted_cdf(fam, far) == pytest.approx(1.0, abs=1e-3)

    def test_positive_x_required(self):
        fam = TiltedFamily(STUDENT, 1.0)
        with pytest.raises(DomainError):
            tilted_cdf(fam, 0.0)
        with pytest.raises(DomainError):
            tilted_pdf(fam, -1.0)

    def test_laplace_median_from_quadrature(self):
        fam = TiltedFamily(LAPLACE, 1.0)
        grid = np.linspace(0.02, 4.0, 400)
        _, F = tilted_levy_cdf_at(grid, beta=1.0, c=1.0)
        median = float(np.interp(0.5, F, grid))
        assert tilted_cdf(fam, median) == pytest.approx(0.5, abs=2e-4)

    def test_logistic_base_matches_series(self):
        fam = TiltedFamily(LOGISTIC, 0.0)
        x = np.array([0.05, 0.2, 0.8])
        np.testing.assert_allclose(
            tilted_pdf(fam, x), pg_half_series_density(x), atol=1e-6
        )

    def test_pdf_normalizes(self):
        fam = TiltedFamily(STUDENT, 1.0)
        val, _ = integrate.quad(lambda x: tilted_pdf(fam, x), 1e-9, 10.0,
                                limit=200)
        assert val == pytest.approx(1.0, abs=1e-3)

    def test_cdf_monotone_on_grid(self):
        for spec, c in [(STUDENT, 0.5), (LOGISTIC, 1.0), (MATERN, 0.7)]:
            fam = TiltedFamily(spec, c)
            m = mean_omega(fam)
            x = np.linspace(m / 50.0, 8.0 * m, 100)
            vals = tilted_cdf(fam, x)
            assert np.all(np.diff(vals) > -1e-4)

    @pytest.mark.parametrize("name", ["student-t", "logistic", "matern32"])
    def test_tilting_consistency(self, name):
        spec = ALL[name]
        c = 1.2
        base = TiltedFamily(spec, 0.0)
        tilted = TiltedFamily(spec, c)
        m = mean_omega(tilted)
        x = np.linspace(m / 5.0, 4.0 * m, 15)
        lhs = tilted_pdf(tilted, x) * spec.phi(c**2)
        rhs = tilted_pdf(base, x) * np.exp(-c**2 * x)
        np.testing.assert_allclose(lhs, rhs, atol=2e-4)

    def test_bromwich_config_validation(self):
        with pytest.raises(ConstraintError):
            BromwichConfig(m_terms=10, euler_depth=15)
        with pytest.raises(ConstraintError):
            BromwichConfig(a=-1.0)


class TestSampling:
    def test_student_t_ks_against_gamma(self):
        rng = np.random.default_rng(123)
        draws = sample_tilted_batch(STUDENT, np.ones(5000), rng)
        p = stats.kstest(draws, gamma_tilted(3.0, 1.0).cdf).pvalue
        assert p > 0.01

    def test_laplace_ks_against_levy_quadrature(self):
        rng = np.random.default_rng(321)
        draws = sample_tilted_batch(LAPLACE, np.ones(5000), rng)
        p = ks_pvalue_against(draws, lambda x: tilted_levy_cdf_at(x, 1.0, 1.0))
        assert p > 0.01

    def test_seeded_determinism(self):
        a = [sample_tilted(TiltedFamily(LOGISTIC, 0.8),
                           np.random.default_rng(7)) for _ in range(3)]
        b = [sample_tilted(TiltedFamily(LOGISTIC, 0.8),
                           np.random.default_rng(7)) for _ in range(3)]
        assert a == b

    def test_scalar_equals_batch_stream(self):
        rng1 = np.random.default_rng(9)
        rng2 = np.random.default_rng(9)
        fam = TiltedFamily(STUDENT, 0.7)
        scalars = np.array([sample_tilted(fam, rng1) for _ in range(40)])
        batch = sample_tilted_batch(STUDENT, np.full(40, 0.7), rng2)
        np.testing.assert_allclose(scalars, batch, rtol=1e-12)

    def test_logistic_mean_large_sample(self):
        rng = np.random.default_rng(5)
        draws = sample_tilted_batch(LOGISTIC, np.ones(100_000), rng)
        target = math.tanh(0.5) / 4.0
        se = math.sqrt(cumulant(TiltedFamily(LOGISTIC, 1.0), 2) / draws.size)
        assert abs(draws.mean() - target) < 3.0 * se

    def test_cdf_residual_within_tolerance(self):
        rng = np.random.default_rng(11)
        fam = TiltedFamily(MATERN, 0.9)
        rng2 = np.random.default_rng(11)
        u = np.clip(rng2.uniform(size=20), 1e-6, 1 - 1e-6)
        draws = sample_tilted_batch(MATERN, np.full(20, 0.9), rng)
        np.testing.assert_allclose(tilted_cdf(fam, draws), u, atol=1e-7)

    def test_unreachable_tolerance_raises(self):
        rng = np.random.default_rng(1)
        with pytest.raises(SamplingError, match="indices"):
            sample_tilted_batch(STUDENT, np.ones(4), rng, newton_tol=1e-16,
                                max_iter=3)

    def test_draws_positive(self):
        rng = np.random.default_rng(2)
        for spec in ALL.values():
            draws = sample_tilted_batch(spec, np.full(64, 0.5), rng)
            assert np.all(draws > 0)
