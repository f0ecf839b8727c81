"""Sparse stochastic variational inference with inducing points.

The latent GP is summarized by M inducing values; each stochastic step
computes the closed-form optimum of the Gaussian factor from one
minibatch (statistics rescaled by n/B for unbiasedness) and interpolates
toward it in natural-parameter space, which keeps the covariance positive
definite for any step size in (0, 1].  Inducing inputs come from k-means++
seeding plus a few Lloyd iterations and stay fixed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import augmentation
from .cavi import AugmentedState, FitTrace, expected_quad_form
from .errors import ConstraintError, DomainError, NumericalError
from .kernels import CholeskyFactor, KernelConfig, chol_jitter, gram
from .likelihoods import LikelihoodSpec, check_support


@dataclass
class SparseModel:
    """Variational Gaussian over inducing values plus the fixed geometry."""

    Z: np.ndarray
    kz_factor: CholeskyFactor
    mean: np.ndarray
    cov_factor: CholeskyFactor
    prior_mean: np.ndarray
    kernel: KernelConfig

    @property
    def m_inducing(self) -> int:
        return self.Z.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor.matrix


@dataclass
class SviOptions:
    """Stochastic-optimization settings.

    The step-size schedule is rho(t) = (t + tau)^(-kappa); ``lr_fixed``
    overrides it with a constant (used for exact full-batch equivalence
    configurations).  ``hyperopt`` turns on one ADAM step per epoch on the
    log kernel hyperparameters with central-difference gradients.
    """

    batch_size: int = 100
    n_inducing: int = 200
    max_epochs: int = 100
    lr_tau: float = 1.0
    lr_kappa: float = 0.51
    lr_fixed: float | None = None
    seed: int = 0
    tol: float = 0.0
    hyperopt: bool = False
    adam_step: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConstraintError("batch_size must be >= 1")
        if self.n_inducing < 1:
            raise ConstraintError("n_inducing must be >= 1")
        if not (0.5 < self.lr_kappa <= 1.0):
            raise ConstraintError(
                f"lr_kappa must lie in (0.5, 1] for stochastic convergence,"
                f" got {self.lr_kappa}"
            )
        if self.lr_tau < 0:
            raise ConstraintError("lr_tau must be >= 0")
        if self.lr_fixed is not None and not (0.0 < self.lr_fixed <= 1.0):
            raise ConstraintError("lr_fixed must lie in (0, 1]")

    def rho(self, t: int) -> float:
        if self.lr_fixed is not None:
            return self.lr_fixed
        return float((t + self.lr_tau) ** (-self.lr_kappa))


def kmeanspp_inducing(X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding followed by 10 Lloyd iterations.

    Seeding picks distinct rows; Lloyd leaves singleton clusters (and
    empty-cluster centers) in place, so M = n returns a permutation of X.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if M > n:
        raise DomainError(f"cannot place {M} inducing points on {n} rows")
    chosen = np.empty(M, dtype=int)
    chosen[0] = rng.integers(n)
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for j in range(1, M):
        weights = np.where(taken, 0.0, d2)
        total = weights.sum()
        if total > 0:
            idx = rng.choice(n, p=weights / total)
        else:
            idx = rng.choice(np.flatnonzero(~taken))
        chosen[j] = idx
        taken[idx] = True
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    centers = X[chosen].copy()
    for _ in range(10):
        dist = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * X @ centers.T
            + np.sum(centers**2, axis=1)[None, :]
        )
        labels = np.argmin(dist, axis=1)
        for j in range(M):
            members = labels == j
            if np.any(members):
                centers[j] = X[members].mean(axis=0)
    return centers


def init_sparse_model(Z: np.ndarray, kernel_cfg: KernelConfig,
                      prior_mean: np.ndarray | None = None) -> SparseModel:
    """Prior-initialized variational distribution: m = mu0, S = K_Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    kz = chol_jitter(gram(Z, None, kernel_cfg), kernel_cfg.jitter)
    mu0 = np.zeros(Z.shape[0]) if prior_mean is None else np.asarray(prior_mean, float)
    return SparseModel(
        Z=Z, kz_factor=kz, mean=mu0.copy(), cov_factor=kz,
        prior_mean=mu0, kernel=kernel_cfg,
    )


def _projection(model: SparseModel, X: np.ndarray):
    """kappa = K_XZ K_Z^{-1} and the cross covariances for the given rows.

    The factorization jitter is treated as a nugget on the prior
    covariance, so point pairs that coincide exactly carry it in the cross
    term too; with Z = X this makes the sparse model collapse onto the
    full GP exactly rather than up to O(jitter).
    """
    kxz = gram(X, model.Z, model.kernel)
    j = model.kz_factor.jitter
    if j > 0.0:
        matches = np.all(X[:, None, :] == model.Z[None, :, :], axis=2)
        if matches.any():
            kxz = kxz + j * matches
    kappa = model.kz_factor.solve(kxz.T).T
    return kappa, kxz


def latent_marginals(model: SparseModel, X: np.ndarray):
    """Marginal mean/variance of f at rows of X under q(f) = int p(f|u) q(u)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    kappa, kxz = _projection(model, X)
    mean = kappa @ (model.mean - model.prior_mean)
    q_ii = np.einsum("ij,ij->i", kappa, kxz)
    proj = kappa @ model.cov_factor.L
    s_ii = np.einsum("ij,ij->i", proj, proj)
    k_ii = model.kernel.variance + model.kz_factor.jitter
    var = np.clip(k_ii - q_ii + s_ii, 0.0, None)
    return mean, var


def predict_latent(model: SparseModel, Xstar: np.ndarray):
    """Predictive latent mean and variance at new inputs (variance >= 0)."""
    return latent_marginals(model, Xstar)


def svi_step(model: SparseModel, X: np.ndarray, batch_idx: np.ndarray,
             aug: AugmentedState, lik: LikelihoodSpec, y: np.ndarray,
             rho: float, scale: float) -> SparseModel:
    """One natural-gradient step from one minibatch.

    ``aug`` holds tilts/means for the batch rows, ``scale`` is n/B.  The
    batch optimum (precision, precision-mean) is blended with the current
    natural parameters by ``rho``; the result is SPD for any rho in (0, 1].
    """
    batch_idx = np.asarray(batch_idx, dtype=int)
    if batch_idx.size == 0:
        raise DomainError("empty minibatch")
    y = check_support(lik, y)
    yb = y[batch_idx]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    kappa, _ = _projection(model, X[batch_idx])
    kz_inv = model.kz_factor.inverse()
    d = 2.0 * aug.omega_bar * lik.gamma(yb) * scale
    lam_opt = kappa.T @ (d[:, None] * kappa) + kz_inv
    eta_opt = kz_inv @ model.prior_mean + kappa.T @ (
        (lik.g(yb) + aug.omega_bar * lik.beta(yb)) * scale
    )
    lam_old = model.cov_factor.inverse()
    eta_old = model.cov_factor.solve(model.mean)
    lam = (1.0 - rho) * lam_old + rho * lam_opt
    eta = (1.0 - rho) * eta_old + rho * eta_opt
    try:
        l_lam = np.linalg.cholesky(0.5 * (lam + lam.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("blended precision lost positive definiteness") from exc
    cov = scipy.linalg.cho_solve((l_lam, True), np.eye(lam.shape[0]))
    cov = 0.5 * (cov + cov.T)
    mean = scipy.linalg.cho_solve((l_lam, True), eta)
    return replace(model, mean=mean, cov_factor=chol_jitter(cov, 0.0))


def batch_local_update(model: SparseModel, X: np.ndarray, y: np.ndarray,
                       lik: LikelihoodSpec,
                       batch_idx: np.ndarray) -> AugmentedState:
    """Fresh tilts for a minibatch from the current sparse marginals."""
    mean_b, var_b = latent_marginals(model, np.atleast_2d(X)[batch_idx])
    y = check_support(lik, y)
    c = np.sqrt(expected_quad_form(lik, y[batch_idx], mean_b, var_b))
    return AugmentedState(c=c, omega_bar=augmentation.omega_bar(lik, c))


def sparse_elbo(model: SparseModel, lik: LikelihoodSpec, y: np.ndarray,
                X: np.ndarray) -> float:
    """Evidence lower bound of the sparse augmented model.

    Expected log-likelihood terms use the full q(f) marginals (including
    the residual conditional variance k_ii - q_ii); the auxiliary factors
    sit at their optimal tilts, and the Gaussian KL is between q(u) and
    p(u).  With Z = X this reduces exactly to the full-GP bound.
    """
    y = check_support(lik, y)
    mean, var = latent_marginals(model, X)
    eh2 = expected_quad_form(lik, y, mean, var)
    c = np.sqrt(eh2)
    w = augmentation.omega_bar(lik, c)
    ell = lik.log_norm_const + lik.g(y) * mean - eh2 * w
    kl_w = augmentation.kl_omega_values(lik, c)
    diff = model.prior_mean - model.mean
    v = model.kz_factor.solve_lower(model.cov_factor.L)
    kl_u = 0.5 * (
        model.kz_factor.logdet
        - model.cov_factor.logdet
        - model.m_inducing
        + float(np.sum(v * v))
        + float(diff @ model.kz_factor.solve(diff))
    )
    return float(np.sum(ell) - np.sum(kl_w) - kl_u)


def hyper_elbo(log_params: np.ndarray, model: SparseModel, lik: LikelihoodSpec,
               y: np.ndarray, X: np.ndarray) -> float:
    """Sparse ELBO as a function of (log variance, log lengthscales).

    The variational distribution is held fixed while the prior geometry is
    rebuilt from the candidate hyperparameters.
    """
    cfg = KernelConfig(
        variance=float(np.exp(log_params[0])),
        lengthscales=np.exp(np.asarray(log_params[1:], dtype=float)),
        jitter=model.kernel.jitter,
    )
    kz = chol_jitter(gram(model.Z, None, cfg), cfg.jitter)
    trial = replace(model, kz_factor=kz, kernel=cfg)
    return sparse_elbo(trial, lik, y, X)


def hyper_gradient(log_params: np.ndarray, model: SparseModel,
                   lik: LikelihoodSpec, y: np.ndarray, X: np.ndarray,
                   step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the sparse ELBO in log-space."""
    log_params = np.asarray(log_params, dtype=float)
    grad = np.zeros_like(log_params)
    for j in range(log_params.size):
        up = log_params.copy()
        dn = log_params.copy()
        up[j] += step
        dn[j] -= step
        grad[j] = (
            hyper_elbo(up, model, lik, y, X) - hyper_elbo(dn, model, lik, y, X)
        ) / (2.0 * step)
    return grad


def fit_svi(X: np.ndarray, y: np.ndarray, lik: LikelihoodSpec,
            kernel_cfg: KernelConfig, opts: SviOptions,
            Z: np.ndarray | None = None, callback=None):
    """Epochs of shuffled minibatch steps; returns (model, trace).

    The per-epoch sparse ELBO lands in the trace.  With hyperopt enabled,
    each epoch ends with one ADAM ascent step on the log kernel
    hyperparameters, after which the inducing Gram factor is rebuilt.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = check_support(lik, y)
    n = y.size
    rng = np.random.default_rng(opts.seed)
    if Z is None:
        Z = kmeanspp_inducing(X, min(opts.n_inducing, n), rng)
    model = init_sparse_model(Z, kernel_cfg)
    batch = min(opts.batch_size, n)
    trace = FitTrace()
    t_start = time.perf_counter()
    trace.append(0, sparse_elbo(model, lik, y, X), np.inf,
                 time.perf_counter() - t_start)
    if callback is not None:
        callback(0, trace.elbo[-1], model, None)

    adam_m = adam_v = None
    log_params = np.concatenate((
        [np.log(kernel_cfg.variance)],
        np.log(kernel_cfg.lengthscales_for_dim(X.shape[1])),
    ))
    t = 0
    for epoch in range(1, opts.max_epochs + 1):
        order = rng.permutation(n)
        prev_mean = model.mean
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            t += 1
            aug = batch_local_update(model, X, y, lik, idx)
            model = svi_step(model, X, idx, aug, lik, y, opts.rho(t), n / idx.size)
        if opts.hyperopt:
            grad = hyper_gradient(log_params, model, lik, y, X, opts.fd_step)
            if adam_m is None:
                adam_m = np.zeros_like(grad)
                adam_v = np.zeros_like(grad)
            adam_m = opts.adam_beta1 * adam_m + (1 - opts.adam_beta1) * grad
            adam_v = opts.adam_beta2 * adam_v + (1 - opts.adam_beta2) * grad**2
            mhat = adam_m / (1 - opts.adam_beta1**epoch)
            vhat = adam_v / (1 - opts.adam_beta2**epoch)
            log_params = log_params + opts.adam_step * mhat / (np.sqrt(vhat) + 1e-8)
            cfg = KernelConfig(
                variance=float(np.exp(log_params[0])),
                lengthscales=np.exp(log_params[1:]),
                jitter=model.kernel.jitter,
            )
            kz = chol_jitter(gram(model.Z, None, cfg), cfg.jitter)
            model = replace(model, kz_factor=kz, kernel=cfg)
        current = sparse_elbo(model, lik, y, X)
        change = float(np.max(np.abs(model.mean - prev_mean)))
        trace.append(epoch, current, change, time.perf_counter() - t_start)
        if callback is not None:
            callback(epoch, current, model, None)
        if opts.tol > 0 and len(trace.elbo) >= 2:
            rel = abs(trace.elbo[-1] - trace.elbo[-2]) / (abs(trace.elbo[-2]) + 1e-12)
            if rel < opts.tol and change < opts.tol:
                trace.converged = True
                break
    return model, trace
