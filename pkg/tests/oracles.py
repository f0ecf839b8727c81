"""Independent brute-force oracles shared across the test suite.

Everything here is deliberately written from first principles (dense
inverses, quadrature, series) and never calls the production code paths
it is used to check.
"""

import numpy as np
from scipy import integrate, stats


def dense_conditional(d, rhs, K):
    """Naive (diag(d) + K^{-1})^{-1} and its mean, by dense inversion."""
    K = np.asarray(K, dtype=float)
    sigma = np.linalg.inv(np.diag(np.asarray(d, float)) + np.linalg.inv(K))
    return sigma @ np.asarray(rhs, float), sigma


def tilted_levy_cdf_at(points, beta, c):
    """CDF of the exponentially tilted Levy density by cumulative quadrature.

    Unnormalized density: (1/(2 beta sqrt(pi))) w^{-3/2}
    exp(-1/(4 beta^2 w)) exp(-c^2 w); the normalizer comes from quadrature
    as well, so nothing here depends on phi.
    """
    def unnorm(w):
        return (
            w**-1.5 * np.exp(-1.0 / (4.0 * beta**2 * w) - c**2 * w)
            / (2.0 * beta * np.sqrt(np.pi))
        )

    norm, _ = integrate.quad(unnorm, 0.0, np.inf)
    points = np.sort(np.asarray(points, dtype=float))
    values = np.empty(points.size)
    prev_x = 0.0
    acc = 0.0
    for i, x in enumerate(points):
        seg, _ = integrate.quad(unnorm, prev_x, x)
        acc += seg
        values[i] = acc / norm
        prev_x = x
    return points, values


def ks_pvalue_against(samples, cdf_at_sorted):
    """Two-sided KS p-value given exact CDF values at the sorted samples."""
    x = np.sort(np.asarray(samples, float))
    n = x.size
    grid, F = cdf_at_sorted(x)
    assert np.array_equal(grid, x)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - F)
    d_minus = np.max(F - (i - 1) / n)
    d = max(d_plus, d_minus)
    return stats.kstwo.sf(d, n)


def pg_half_series_density(w, terms=300):
    """Alternating-series density of half a PG(1, 0) variable.

    This is the base mixing law of the logistic radial function under the
    parameterization used here.
    """
    w = np.asarray(w, dtype=float)
    k = np.arange(terms)[:, None]
    a = 2 * k + 1
    series = (
        (-1.0) ** k * a / (2.0 * np.sqrt(np.pi))
        * w[None, :] ** -1.5
        * np.exp(-(a**2) / (16.0 * w[None, :]))
    )
    return series.sum(axis=0)


def gamma_tilted(nu, c):
    """Closed-form tilted law for the student-t radial function."""
    return stats.gamma(a=(nu + 1.0) / 2.0, scale=1.0 / (nu + c**2))


def ar1_series(coeff, length, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(length)
    x[0] = rng.standard_normal() / np.sqrt(1 - coeff**2)
    eps = rng.standard_normal(length)
    for t in range(1, length):
        x[t] = coeff * x[t - 1] + eps[t]
    return x


def elbo_by_quadrature_student_t(y, k_var, nu, m, s_var):
    """Brute-force E_q[log p(y, f, w) - log q(f, w)] for one data point.

    q(f) = N(m, s_var); q(w) is the conjugate Gamma((nu+1)/2, nu + c^2)
    with c^2 = E_q[(y - f)^2].  The joint density uses the augmented
    likelihood C * exp(-(y-f)^2 w), the Gamma((nu+1)/2, nu) base law and
    the N(0, k_var) prior.
    """
    import math

    a = (nu + 1.0) / 2.0
    log_c = math.lgamma(a) - math.lgamma(nu / 2.0) - 0.5 * math.log(nu * math.pi)
    c2 = (y - m) ** 2 + s_var
    q_w = stats.gamma(a=a, scale=1.0 / (nu + c2))
    p_w = stats.gamma(a=a, scale=1.0 / nu)
    q_f = stats.norm(loc=m, scale=np.sqrt(s_var))
    p_f = stats.norm(loc=0.0, scale=np.sqrt(k_var))

    def integrand(f, w):
        log_joint = (
            log_c - (y - f) ** 2 * w
            + p_w.logpdf(w) + p_f.logpdf(f)
        )
        log_q = q_f.logpdf(f) + q_w.logpdf(w)
        return np.exp(q_f.logpdf(f) + q_w.logpdf(w)) * (log_joint - log_q)

    val, _ = integrate.dblquad(
        integrand,
        q_w.ppf(1e-12), q_w.ppf(1 - 1e-12),
        lambda _: m - 10 * np.sqrt(s_var), lambda _: m + 10 * np.sqrt(s_var),
        epsabs=1e-10, epsrel=1e-10,
    )
    return val


def finite_diff(fn, x, h):
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def second_diff(fn, x, h):
    return (fn(x + h) - 2.0 * fn(x) + fn(x - h)) / h**2
