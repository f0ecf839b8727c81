"""MCMC diagnostics and a joint-distribution sampler-correctness harness.

The scalar diagnostics (autocorrelation, split potential-scale-reduction,
effective sample size) are pure functions of traces.  The joint test runs
a forward simulator of (f, omega, y) against the successive-conditional
chain that also resamples y, and compares statistic means by z-score; a
broken conditional shows up as |z| far outside the Monte-Carlo band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import augmentation
from .cavi import gaussian_conditional
from .errors import DomainError
from .kernels import KernelConfig, chol_jitter, gram
from .likelihoods import BINARY, LikelihoodSpec, quad_form


def autocorr(trace, max_lag: int) -> np.ndarray:
    """Length-normalized (biased) sample autocorrelation at lags 0..max_lag."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n <= max_lag + 1:
        raise DomainError(
            f"trace of length {n} too short for max_lag {max_lag}"
        )
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        raise DomainError("constant trace has undefined autocorrelation")
    size = 1
    while size < 2 * n:
        size *= 2
    fx = np.fft.rfft(x, size)
    acov = np.fft.irfft(fx * np.conj(fx), size)[: max_lag + 1]
    return acov / denom


def gelman_rubin(chains) -> float:
    """Split potential-scale-reduction factor over >= 2 equal-length chains."""
    chains = [np.asarray(c, dtype=float) for c in chains]
    if len(chains) < 2:
        raise DomainError("gelman_rubin needs at least 2 chains")
    length = min(c.size for c in chains)
    if length < 10:
        raise DomainError("chains too short for a split-Rhat estimate")
    half = length // 2
    splits = []
    for c in chains:
        splits.append(c[:half])
        splits.append(c[half:2 * half])
    arr = np.stack(splits)
    m, n = arr.shape
    within = float(np.mean(np.var(arr, axis=1, ddof=1)))
    between = n * float(np.var(np.mean(arr, axis=1), ddof=1))
    var_plus = (n - 1) / n * within + between / n
    if within == 0.0:
        raise DomainError("constant chains have undefined scale reduction")
    return float(np.sqrt(var_plus / within))


def ess_from_autocorr(rho: np.ndarray, n: int) -> float:
    """ESS from an autocorrelation sequence via Geyer's initial positive sums."""
    pair_sum = 0.0
    k = 1
    while k + 1 < rho.size:
        gamma = rho[k] + rho[k + 1]
        if gamma <= 0:
            break
        pair_sum += gamma
        k += 2
    ess = n / (1.0 + 2.0 * pair_sum)
    return float(np.clip(ess, 1.0, n))


def ess(trace) -> float:
    """Effective sample size N / (1 + 2 sum rho_k), clamped to [1, N]."""
    x = np.asarray(trace, dtype=float)
    if x.size < 10:
        raise DomainError("trace too short for an ESS estimate")
    rho = autocorr(x, max_lag=x.size - 2)
    return ess_from_autocorr(rho, x.size)


@dataclass
class GewekeResult:
    """z-scores per monitored statistic plus the raw means behind them."""

    z_scores: dict
    forward_means: dict
    chain_means: dict
    draws: int

    def max_abs_z(self) -> float:
        return max(abs(v) for v in self.z_scores.values())


def _resample_targets(lik: LikelihoodSpec, f: np.ndarray, omega: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw y | f, omega under the augmented joint.

    Regression families with the squared residual (y - f)^2 give a
    Gaussian with precision 2*omega; the logistic conditional over {-1,+1}
    does not depend on omega and is a sigmoid flip.
    """
    if lik.name == "logistic":
        p_pos = 1.0 / (1.0 + np.exp(-f))
        return np.where(rng.uniform(size=f.size) < p_pos, 1.0, -1.0)
    if lik.support == BINARY:
        raise DomainError(
            f"joint test is not defined for the unnormalized '{lik.name}' family"
        )
    return f + rng.standard_normal(f.size) / np.sqrt(2.0 * omega)


def geweke_joint_test(lik: LikelihoodSpec, kernel_cfg: KernelConfig, n: int,
                      draws: int, seed: int = 0, omega_scale: float = 1.0,
                      bromwich: augmentation.BromwichConfig = augmentation.DEFAULT_BROMWICH,
                      ) -> GewekeResult:
    """Forward vs successive-conditional comparison of {mean f, mean f^2, mean omega}.

    ``omega_scale`` multiplies the auxiliary draws inside the chain; any
    value other than 1 corrupts the transition kernel and should be flagged
    by large z-scores.
    """
    if draws < 1000:
        raise DomainError("joint test needs at least 1000 draws per simulator")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    kfac = chol_jitter(gram(X, None, kernel_cfg), kernel_cfg.jitter)

    # Forward simulator: independent draws from the augmented joint.
    z = rng.standard_normal((n, draws))
    f_fwd = kfac.L @ z
    total = n * draws
    chunks = []
    for start in range(0, total, 20000):
        size = min(20000, total - start)
        chunks.append(
            augmentation.sample_tilted_batch(lik, np.zeros(size), rng, bromwich)
        )
    w_fwd = np.concatenate(chunks).reshape(n, draws)
    fwd = {
        "mean_f": f_fwd.mean(axis=0),
        "mean_f2": (f_fwd**2).mean(axis=0),
        "mean_omega": w_fwd.mean(axis=0),
    }

    # Successive-conditional simulator: Gibbs plus a y-resampling move.
    f = f_fwd[:, 0].copy()
    omega = w_fwd[:, 0].copy()
    y = _resample_targets(lik, f, omega, rng)
    stats = {key: np.empty(draws) for key in fwd}
    for t in range(draws):
        c = np.sqrt(quad_form(lik, y, f))
        omega = augmentation.sample_tilted_batch(lik, c, rng, bromwich)
        omega = omega * omega_scale
        d = 2.0 * omega * lik.gamma(y)
        rhs = lik.g(y) + omega * lik.beta(y)
        mean, sigma = gaussian_conditional(d, rhs, kfac)
        f = mean + chol_jitter(sigma, 0.0).L @ rng.standard_normal(n)
        y = _resample_targets(lik, f, omega, rng)
        stats["mean_f"][t] = f.mean()
        stats["mean_f2"][t] = (f**2).mean()
        stats["mean_omega"][t] = omega.mean()

    z_scores = {}
    fwd_means = {}
    chain_means = {}
    for key in fwd:
        a, b = fwd[key], stats[key]
        se_a = a.std(ddof=1) / np.sqrt(a.size)
        se_b = b.std(ddof=1) / np.sqrt(ess(b))
        z_scores[key] = float((a.mean() - b.mean()) / np.hypot(se_a, se_b))
        fwd_means[key] = float(a.mean())
        chain_means[key] = float(b.mean())
    return GewekeResult(
        z_scores=z_scores, forward_means=fwd_means,
        chain_means=chain_means, draws=draws,
    )


@dataclass
class DiagnosticsReport:
    """Per-scalar chain diagnostics in a JSON-friendly layout."""

    scalars: dict = field(default_factory=dict)
    worst_lag1: float = 0.0
    seconds_per_sample: float | None = None

    def to_dict(self) -> dict:
        return {
            "scalars": self.scalars,
            "worst_lag1": self.worst_lag1,
            "seconds_per_sample": self.seconds_per_sample,
        }


def chain_report(chain_traces: dict, max_lag: int = 20,
                 seconds_per_sample: float | None = None) -> DiagnosticsReport:
    """Diagnostics for named scalars, each a list of per-chain traces.

    Reports lag-1..max_lag autocorrelation (pooled mean over chains),
    split-Rhat and total ESS per scalar, and the worst lag-1 across
    scalars as the headline mixing number.
    """
    report = DiagnosticsReport(seconds_per_sample=seconds_per_sample)
    worst = 0.0
    for name, traces in chain_traces.items():
        acfs = np.stack([autocorr(t, max_lag) for t in traces])
        acf = acfs.mean(axis=0)
        total_ess = float(sum(ess(t) for t in traces))
        psrf = gelman_rubin(traces) if len(traces) >= 2 else None
        report.scalars[name] = {
            "autocorr": acf.tolist(),
            "lag1": float(acf[1]),
            "gelman_rubin": psrf,
            "ess": total_ess,
        }
        worst = max(worst, abs(float(acf[1])))
    report.worst_lag1 = worst
    return report


def monitored_scalars(f_samples: np.ndarray, seed: int = 0) -> dict:
    """Standard monitored scalars: latent mean plus three fixed coordinates.

    Which coordinates are monitored is drawn once from ``seed`` so reruns
    agree; the headline lag-1 is reported as the worst across them.
    """
    chains, _, n = f_samples.shape
    rng = np.random.default_rng(seed)
    coords = sorted(rng.choice(n, size=min(3, n), replace=False).tolist())
    traces = {"mean_f": [f_samples[c].mean(axis=1) for c in range(chains)]}
    for j in coords:
        traces[f"f_{j}"] = [f_samples[c, :, j] for c in range(chains)]
    return traces
