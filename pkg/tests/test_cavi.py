"""Coordinate-ascent updates, ELBO, augmentation gap, and full fits."""

import dataclasses
import math

import numpy as np
import pytest

from augconj.cavi import (
    AugmentedState,
    GaussianPosterior,
    augmentation_gap,
    elbo,
    fit_cavi,
    gaussian_conditional,
    global_update,
    local_update,
)
from augconj.dataio import synth
from augconj.errors import NumericalError
from augconj.kernels import KernelConfig, chol_jitter, gram
from augconj.likelihoods import make_likelihood

from oracles import dense_conditional, elbo_by_quadrature_student_t

STUDENT = make_likelihood("student-t", {"nu": 3.0})
LAPLACE = make_likelihood("laplace", {"beta": 1.0})
LOGISTIC = make_likelihood("logistic")

KCFG_1D = KernelConfig(variance=0.1, lengthscales=np.array([1.0]), jitter=1e-6)


def _posterior(mean, cov, prior_mean=None):
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    mu0 = np.zeros_like(mean) if prior_mean is None else np.asarray(prior_mean)
    return GaussianPosterior(mean=mean, cov_factor=chol_jitter(cov, 0.0),
                             prior_mean=mu0)


def _random_problem(n, seed, lik=STUDENT, d=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    cfg = KernelConfig(variance=0.5, lengthscales=np.full(d, 1.5), jitter=1e-8)
    kfac = chol_jitter(gram(X, None, cfg), cfg.jitter)
    if lik.support == "binary":
        y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    else:
        y = rng.standard_normal(n)
    return X, y, cfg, kfac


class TestLocalUpdate:
    def test_perfect_fit_gives_zero_tilt(self):
        y = np.array([1.2, -0.4])
        q = _posterior(y, np.zeros((2, 2)))
        aug = local_update(q, LAPLACE, y)
        np.testing.assert_allclose(aug.c, 0.0, atol=1e-12)
        assert np.all(aug.omega_bar > 0)  # guard keeps the mean finite

    def test_logistic_example(self):
        q = _posterior([1.0], [[1.0]])
        aug = local_update(q, LOGISTIC, np.array([1.0]))
        assert aug.c[0] == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_student_t_example(self):
        q = _posterior([0.0], [[4.0]])
        aug = local_update(q, STUDENT, np.array([0.0]))
        assert aug.c[0] == pytest.approx(2.0, abs=1e-12)
        assert aug.omega_bar[0] == pytest.approx(4.0 / 14.0, abs=1e-12)

    def test_corrupted_posterior_detected(self):
        q = _posterior([0.0], [[1.0]])
        bad = dataclasses.replace(
            STUDENT, alpha=lambda y: np.full_like(np.asarray(y, float), -1.0)
        )
        with pytest.raises(NumericalError, match="corrupted"):
            local_update(q, bad, np.array([0.0]))


class TestGlobalUpdate:
    def test_prior_recovered_at_zero_precision(self):
        X, y, cfg, kfac = _random_problem(12, 0)
        aug = AugmentedState(c=np.zeros(12), omega_bar=np.zeros(12))
        zeroed = dataclasses.replace(
            STUDENT, g=lambda t: np.zeros_like(np.asarray(t, float)),
            beta=lambda t: np.zeros_like(np.asarray(t, float)),
        )
        q = global_update(aug, zeroed, y, kfac)
        np.testing.assert_allclose(q.cov, kfac.matrix, atol=1e-10)
        np.testing.assert_allclose(q.mean, 0.0, atol=1e-12)

    def test_scalar_example(self):
        kfac = chol_jitter(np.array([[1.0]]), 0.0)
        aug = AugmentedState(c=np.array([1.0]), omega_bar=np.array([0.5]))
        q = global_update(aug, STUDENT, np.array([1.0]), kfac)
        assert q.cov[0, 0] == pytest.approx(0.5, abs=1e-12)
        assert q.mean[0] == pytest.approx(0.5, abs=1e-12)

    def test_matches_dense_inverse_oracle(self):
        X, y, cfg, kfac = _random_problem(8, 1)
        q0 = _posterior(np.zeros(8), kfac.matrix)
        aug = local_update(q0, STUDENT, y)
        q = global_update(aug, STUDENT, y, kfac)
        d = 2.0 * aug.omega_bar * STUDENT.gamma(y)
        rhs = STUDENT.g(y) + aug.omega_bar * STUDENT.beta(y)
        mean, sigma = dense_conditional(d, rhs, kfac.matrix)
        np.testing.assert_allclose(q.cov, sigma, atol=1e-8)
        np.testing.assert_allclose(q.mean, mean, atol=1e-8)

    def test_zero_gamma_rows_contribute_nothing(self):
        X, y, cfg, kfac = _random_problem(6, 2, lik=LOGISTIC)
        aug = AugmentedState(c=np.ones(6), omega_bar=np.full(6, 0.2))
        no_gamma = dataclasses.replace(
            LOGISTIC, gamma=lambda t: np.zeros_like(np.asarray(t, float))
        )
        q = global_update(aug, no_gamma, y, kfac)
        np.testing.assert_allclose(q.cov, kfac.matrix, atol=1e-10)


class TestElbo:
    def test_single_sweep_improves(self):
        X, y, cfg, kfac = _random_problem(20, 3)
        rng = np.random.default_rng(4)
        q = _posterior(rng.standard_normal(20), kfac.matrix)
        aug = local_update(q, STUDENT, y)
        before = elbo(q, aug, STUDENT, y, kfac)
        q2 = global_update(aug, STUDENT, y, kfac)
        aug2 = local_update(q2, STUDENT, y)
        after = elbo(q2, aug2, STUDENT, y, kfac)
        assert after >= before - 1e-8

    def test_gaussian_kl_zero_at_prior(self):
        X, y, cfg, kfac = _random_problem(10, 5)
        q = GaussianPosterior(mean=np.zeros(10), cov_factor=kfac,
                              prior_mean=np.zeros(10))
        aug = local_update(q, STUDENT, y)
        value = elbo(q, aug, STUDENT, y, kfac)
        from augconj.cavi import _gaussian_kl

        assert _gaussian_kl(q, kfac) == pytest.approx(0.0, abs=1e-9)
        assert np.isfinite(value)

    def test_matches_quadrature_oracle_n1(self):
        y = np.array([0.8])
        k_var = 0.6
        kfac = chol_jitter(np.array([[k_var]]), 0.0)
        q = _posterior([0.3], [[0.2]])
        aug = local_update(q, STUDENT, y)
        ours = elbo(q, aug, STUDENT, y, kfac)
        oracle = elbo_by_quadrature_student_t(y[0], k_var, 3.0, 0.3, 0.2)
        assert ours == pytest.approx(oracle, abs=1e-4)


class TestAugmentationGap:
    def test_point_mass_posterior_closes_gap(self):
        y = np.array([0.5, -1.0])
        q = _posterior([0.2, 0.1], 1e-16 * np.eye(2))
        aug = local_update(q, STUDENT, y)
        assert abs(augmentation_gap(q, aug, STUDENT, y)) < 1e-6

    def test_logistic_unit_variance_strictly_positive(self):
        q = _posterior([0.0], [[1.0]])
        y = np.array([1.0])
        aug = local_update(q, LOGISTIC, y)
        assert augmentation_gap(q, aug, LOGISTIC, y) > 1e-4

    def test_matches_quadrature_oracle(self):
        from scipy import integrate, stats

        q = _posterior([0.0], [[1.0]])
        y = np.array([1.0])
        aug = local_update(q, LOGISTIC, y)
        ours = augmentation_gap(q, aug, LOGISTIC, y)
        e_log_phi, _ = integrate.quad(
            lambda f: stats.norm.pdf(f) * LOGISTIC.log_phi(f * f), -12, 12
        )
        oracle = e_log_phi - LOGISTIC.log_phi(1.0)
        assert ours == pytest.approx(oracle, abs=1e-6)

    def test_nonnegative_along_fit(self):
        X, y, cfg, kfac = _random_problem(25, 6, lik=LOGISTIC)
        gaps = []

        def record(it, val, q, aug):
            gaps.append(augmentation_gap(q, aug, LOGISTIC, y))

        fit_cavi(X, y, LOGISTIC, cfg, max_iter=30, tol=1e-9, callback=record)
        assert all(g >= -1e-8 for g in gaps)


class TestFitCavi:
    @pytest.mark.parametrize("name,hp", [
        ("student-t", {"nu": 3.0}), ("laplace", {"beta": 1.0}),
        ("logistic", {}), ("bayesian-svm", {}), ("matern32", {"rho": 1.0}),
    ])
    def test_monotone_elbo_all_likelihoods(self, name, hp):
        lik = make_likelihood(name, hp)
        if lik.support == "binary":
            ds = synth("two-blobs-classification", 60, 2, KCFG_1D, lik, seed=8)
        else:
            cfg = KernelConfig(variance=0.1, lengthscales=np.array([1.0, 1.0]),
                               jitter=1e-6)
            ds = synth("gp-regression", 60, 2, cfg, lik, seed=8)
        cfg = KernelConfig(variance=0.1, lengthscales=np.full(ds.d, 1.0),
                           jitter=1e-6)
        _, _, trace = fit_cavi(ds.X, ds.y, lik, cfg, max_iter=100, tol=1e-9)
        diffs = np.diff(trace.elbo)
        assert np.all(diffs >= -1e-8)
        assert trace.converged

    def test_fixed_point_n1(self):
        X = np.array([[0.0]])
        y = np.array([0.7])
        q, aug, trace = fit_cavi(X, y, STUDENT, KCFG_1D, max_iter=500,
                                 tol=1e-13)
        kfac = chol_jitter(gram(X, None, KCFG_1D), KCFG_1D.jitter)
        q2 = global_update(local_update(q, STUDENT, y), STUDENT, y, kfac)
        assert abs(q2.mean[0] - q.mean[0]) < 1e-10
        assert abs(q2.cov[0, 0] - q.cov[0, 0]) < 1e-10

    def test_fixed_point_consistency(self):
        X, y, cfg, kfac = _random_problem(30, 9, lik=LAPLACE)
        q, aug, trace = fit_cavi(X, y, LAPLACE, cfg, max_iter=500, tol=1e-11)
        q2 = global_update(local_update(q, LAPLACE, y), LAPLACE, y, kfac)
        assert np.max(np.abs(q2.mean - q.mean)) < 1e-8

    def test_separable_two_points(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([-1.0, 1.0])
        q, _, _ = fit_cavi(X, y, LOGISTIC, KCFG_1D, max_iter=200, tol=1e-10)
        assert np.all(np.sign(q.mean) == y)

    def test_prior_recovery_with_tempered_likelihood(self):
        eps = 1e-12
        tempered = dataclasses.replace(
            STUDENT,
            g=lambda t: eps * STUDENT.g(t),
            beta=lambda t: eps * STUDENT.beta(t),
            gamma=lambda t: eps * STUDENT.gamma(t),
        )
        X, y, cfg, kfac = _random_problem(15, 10)
        q, _, _ = fit_cavi(X, y, tempered, cfg, max_iter=50, tol=1e-10)
        np.testing.assert_allclose(q.mean, 0.0, atol=1e-6)
        np.testing.assert_allclose(q.cov, kfac.matrix, atol=1e-6)

    def test_trace_records_every_iteration(self):
        X, y, cfg, _ = _random_problem(10, 11)
        _, _, trace = fit_cavi(X, y, STUDENT, cfg, max_iter=5, tol=0.0)
        assert trace.iterations == list(range(6))
        assert all(np.isfinite(v) for v in trace.elbo)
        assert not trace.converged


class TestGaussianConditional:
    def test_agrees_with_dense_oracle_random_sizes(self):
        rng = np.random.default_rng(12)
        for n in (3, 7, 13):
            A = rng.standard_normal((n, n))
            K = A @ A.T + n * np.eye(n)
            d = rng.uniform(0.0, 3.0, size=n)
            rhs = rng.standard_normal(n)
            mean, sigma = gaussian_conditional(d, rhs, chol_jitter(K, 0.0))
            mean_o, sigma_o = dense_conditional(d, rhs, K)
            np.testing.assert_allclose(sigma, sigma_o, atol=1e-9)
            np.testing.assert_allclose(mean, mean_o, atol=1e-9)
