"""Predictive distributions and held-out metrics.

Latent marginals at test inputs come from the fitted posterior (full GP,
sparse model, or averaged over retained Gibbs samples); expectations of
the likelihood against those marginals are taken by Gauss-Hermite
quadrature, with the log-density accumulated in log space so confident
mistakes do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cavi import FullGPModel, _gh_nodes
from .errors import DomainError, NumericalError
from .gibbs import ChainStore
from .kernels import chol_jitter, gram
from .likelihoods import BINARY, LikelihoodSpec, check_support, log_likelihood
from .svgp import SparseModel, init_sparse_model, predict_latent

_SQRT2 = np.sqrt(2.0)


@dataclass
class PredictiveSummary:
    """Per-point predictive quantities and their aggregates."""

    task: str
    latent_mean: np.ndarray
    latent_var: np.ndarray
    log_density: np.ndarray
    nll: float
    rmse: float | None = None
    error_rate: float | None = None
    prob_positive: np.ndarray | None = None
    calibrated: bool = True


def gh_expectation(mean: float, var: float, integrand, order: int = 32) -> float:
    """Gauss-Hermite estimate of E[integrand(f)] for f ~ N(mean, var)."""
    if order < 1:
        raise DomainError("quadrature order must be >= 1")
    if var < 0:
        raise DomainError("variance must be >= 0")
    x, w = _gh_nodes(order)
    vals = integrand(mean + _SQRT2 * np.sqrt(var) * x)
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("integrand returned a non-finite value at a node")
    return float(vals @ w / np.sqrt(np.pi))


def _log_predictive(lik: LikelihoodSpec, y: np.ndarray, means: np.ndarray,
                    variances: np.ndarray, order: int) -> np.ndarray:
    """log E_{N(mean, var)}[p(y | f)] per point, via log-sum-exp over nodes."""
    x, w = _gh_nodes(order)
    f = means[:, None] + _SQRT2 * np.sqrt(variances)[:, None] * x[None, :]
    ll = log_likelihood(lik, np.repeat(y[:, None], order, axis=1).ravel(),
                        f.ravel()).reshape(f.shape)
    peak = ll.max(axis=1, keepdims=True)
    return (
        np.log(np.exp(ll - peak) @ w) + peak[:, 0] - 0.5 * np.log(np.pi)
    )


def _class_probability(lik: LikelihoodSpec, means: np.ndarray,
                       variances: np.ndarray, order: int) -> np.ndarray:
    """E_q[p(y = +1 | f)]; bayesian-svm scores are normalized per latent value."""
    x, w = _gh_nodes(order)
    f = means[:, None] + _SQRT2 * np.sqrt(variances)[:, None] * x[None, :]
    ones = np.ones_like(f.ravel())
    lp = log_likelihood(lik, ones, f.ravel()).reshape(f.shape)
    lm = log_likelihood(lik, -ones, f.ravel()).reshape(f.shape)
    peak = np.maximum(lp, lm)
    p_pos = np.exp(lp - peak) / (np.exp(lp - peak) + np.exp(lm - peak))
    return np.clip(p_pos @ w / np.sqrt(np.pi), 0.0, 1.0)


def _latent_at(source, Xtest: np.ndarray):
    """Latent marginals (mean, var) at test inputs for a VI source."""
    if isinstance(source, SparseModel):
        return predict_latent(source, Xtest)
    if isinstance(source, FullGPModel):
        proxy = init_sparse_model(source.X, source.kernel,
                                  source.posterior.prior_mean)
        proxy.mean = source.posterior.mean
        proxy.cov_factor = source.posterior.cov_factor
        return predict_latent(proxy, Xtest)
    raise DomainError(f"unsupported posterior source {type(source).__name__}")


def evaluate(source, Xtest: np.ndarray, ytest: np.ndarray,
             lik: LikelihoodSpec, order: int = 32) -> PredictiveSummary:
    """Held-out metrics for a fitted posterior.

    Variational sources use their latent marginals; a ChainStore averages
    the per-sample plug-in predictive over retained draws.  Classification
    thresholds the positive-class probability at 0.5; regression reports
    the RMSE of the predictive latent mean.
    """
    Xtest = np.atleast_2d(np.asarray(Xtest, dtype=float))
    ytest = check_support(lik, ytest)
    if Xtest.shape[0] != ytest.size:
        raise DomainError("test inputs and targets disagree in length")

    if isinstance(source, ChainStore):
        return _evaluate_chains(source, Xtest, ytest, lik, order)

    mean, var = _latent_at(source, Xtest)
    log_dens = _log_predictive(lik, ytest, mean, var, order)
    return _summarize(lik, ytest, mean, var, log_dens, order)


def _summarize(lik, ytest, mean, var, log_dens, order,
               prob_positive=None) -> PredictiveSummary:
    nll = -float(np.mean(log_dens))
    if lik.support == BINARY:
        if prob_positive is None:
            prob_positive = _class_probability(lik, mean, var, order)
        predicted = np.where(prob_positive > 0.5, 1.0, -1.0)
        return PredictiveSummary(
            task="binary",
            latent_mean=mean,
            latent_var=var,
            log_density=log_dens,
            nll=nll,
            error_rate=float(np.mean(predicted != ytest)),
            prob_positive=prob_positive,
            calibrated=lik.name != "bayesian-svm",
        )
    return PredictiveSummary(
        task="regression",
        latent_mean=mean,
        latent_var=var,
        log_density=log_dens,
        nll=nll,
        rmse=float(np.sqrt(np.mean((mean - ytest) ** 2))),
    )


def _evaluate_chains(store: ChainStore, Xtest, ytest, lik,
                     order) -> PredictiveSummary:
    samples = store.pooled()
    if samples.size == 0:
        raise DomainError("chain store holds no retained samples")
    kfac = chol_jitter(gram(store.X, None, store.kernel), store.kernel.jitter)
    kxs = gram(store.X, Xtest, store.kernel)
    alpha = kfac.solve(kxs)
    # Plug-in conditional variance is sample-independent.
    var_cond = np.clip(
        store.kernel.variance - np.einsum("ij,ij->j", kxs, alpha), 0.0, None
    )
    mu0 = store.prior_mean
    means = (samples - mu0) @ alpha  # (draws, n*)
    latent_mean = means.mean(axis=0)
    latent_var = var_cond + means.var(axis=0)

    per_sample_logp = np.stack([
        _log_predictive(lik, ytest, means[s], var_cond, order)
        for s in range(means.shape[0])
    ])
    peak = per_sample_logp.max(axis=0)
    log_dens = peak + np.log(
        np.mean(np.exp(per_sample_logp - peak), axis=0)
    )
    prob_positive = None
    if lik.support == BINARY:
        per_sample_p = np.stack([
            _class_probability(lik, means[s], var_cond, order)
            for s in range(means.shape[0])
        ])
        prob_positive = per_sample_p.mean(axis=0)
    return _summarize(lik, ytest, latent_mean, latent_var, log_dens, order,
                      prob_positive=prob_positive)
