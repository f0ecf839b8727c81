"""Super-Gaussian likelihood families.

A likelihood in this family factorizes per data point as

    p(y | f) = C * exp(g(y) * f) * phi(alpha(y) - beta(y)*f + gamma(y)*f**2),

where ``phi`` is completely monotone with ``phi(0) = 1`` and the quadratic
form is the squared norm of an affine residual ``h(f, y)``.  The coefficient
decomposition is what the inference code consumes: the augmented Gaussian
conditionals only ever see ``(g, alpha, beta, gamma)`` and the radial
function ``phi`` with its first derivative.

Five families ship: student-t, laplace and matern32 for real-valued
regression, logistic and bayesian-svm for binary (+/-1) classification.
``phi`` is written with numpy ufuncs so it also accepts complex arguments
(the numerical Laplace inversion evaluates it on a Bromwich contour).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConstraintError, DomainError

REGRESSION = "regression"
BINARY = "binary"

LIKELIHOOD_NAMES = ("student-t", "laplace", "logistic", "bayesian-svm", "matern32")


@dataclass(frozen=True)
class LikelihoodSpec:
    """A super-Gaussian likelihood given by its coefficient functions.

    ``alpha``, ``beta`` and ``gamma`` map target values to the coefficients
    of the quadratic form; ``g`` is the linear tilt on the latent value.
    ``phi_prime`` is the analytic first derivative of ``phi`` and
    ``log_phi`` a stable evaluation of ``log(phi)`` (it must not underflow
    for large arguments).  ``log_phi_curv`` is the analytic second
    derivative of ``log(phi)``; it is optional and only used to return
    exact second cumulants of the auxiliary variable.
    """

    name: str
    hyperparams: dict
    support: str
    log_norm_const: float
    g: Callable[[np.ndarray], np.ndarray]
    alpha: Callable[[np.ndarray], np.ndarray]
    beta: Callable[[np.ndarray], np.ndarray]
    gamma: Callable[[np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]
    phi_prime: Callable[[np.ndarray], np.ndarray]
    log_phi: Callable[[np.ndarray], np.ndarray]
    log_phi_curv: Callable[[np.ndarray], np.ndarray] | None = None
    # True when phi'(r) diverges as r -> 0 (Laplace-type radial parts);
    # the augmentation layer then clamps the tilt away from zero.
    singular_at_zero: bool = False


def _require_positive(hyperparams: dict, key: str, family: str) -> float:
    if key not in hyperparams:
        raise ConstraintError(
            f"{family} requires hyperparameter '{key}' (> 0)"
        )
    value = float(hyperparams[key])
    if not value > 0 or not math.isfinite(value):
        raise ConstraintError(
            f"{family} hyperparameter '{key}' must be positive and finite, got {value}"
        )
    return value


def _reject_unknown(hyperparams: dict, allowed: tuple, family: str) -> None:
    unknown = set(hyperparams) - set(allowed)
    if unknown:
        raise ConstraintError(
            f"unknown hyperparameter(s) {sorted(unknown)} for {family}; "
            f"allowed: {list(allowed)}"
        )


def _residual_coeffs():
    """alpha, beta, gamma for the squared residual (y - f)^2."""
    return (
        lambda y: np.asarray(y, dtype=float) ** 2,
        lambda y: 2.0 * np.asarray(y, dtype=float),
        lambda y: np.ones_like(np.asarray(y, dtype=float)),
    )


def _student_t(hyperparams: dict) -> LikelihoodSpec:
    _reject_unknown(hyperparams, ("nu",), "student-t")
    nu = _require_positive(hyperparams, "nu", "student-t")
    a = (nu + 1.0) / 2.0
    log_c = math.lgamma(a) - math.lgamma(nu / 2.0) - 0.5 * math.log(nu * math.pi)
    alpha, beta, gamma = _residual_coeffs()
    return LikelihoodSpec(
        name="student-t",
        hyperparams={"nu": nu},
        support=REGRESSION,
        log_norm_const=log_c,
        g=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        phi=lambda r: (1.0 + r / nu) ** (-a),
        phi_prime=lambda r: -(a / nu) * (1.0 + r / nu) ** (-a - 1.0),
        log_phi=lambda r: -a * np.log1p(r / nu),
        log_phi_curv=lambda r: a / (nu + r) ** 2,
    )


def _laplace(hyperparams: dict) -> LikelihoodSpec:
    _reject_unknown(hyperparams, ("beta",), "laplace")
    b = _require_positive(hyperparams, "beta", "laplace")
    alpha, beta, gamma = _residual_coeffs()
    return LikelihoodSpec(
        name="laplace",
        hyperparams={"beta": b},
        support=REGRESSION,
        log_norm_const=-math.log(2.0 * b),
        g=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        phi=lambda r: np.exp(-np.sqrt(r) / b),
        phi_prime=lambda r: -np.exp(-np.sqrt(r) / b) / (2.0 * b * np.sqrt(r)),
        log_phi=lambda r: -np.sqrt(r) / b,
        log_phi_curv=lambda r: 1.0 / (4.0 * b * np.asarray(r, dtype=float) ** 1.5),
        singular_at_zero=True,
    )


def _sech_stable(z):
    """sech(z) without overflow for Re(z) >= 0 (real or complex input)."""
    ez = np.exp(-z)
    return 2.0 * ez / (1.0 + ez * ez)


def _logistic_log_phi_curv(r):
    # tanh(u) - u*sech(u)^2 cancels to O(u^3) near zero; switch to its
    # Taylor series there.
    r = np.asarray(r, dtype=float)
    u = np.sqrt(r) / 2.0
    small = u < 1e-2
    u2 = u * u
    series = (2.0 / 3.0 - (8.0 / 15.0) * u2 + (34.0 / 105.0) * u2 * u2) / 64.0
    ub = np.where(small, 1.0, u)
    direct = (np.tanh(ub) - ub * _sech_stable(ub) ** 2) / (64.0 * ub**3)
    out = np.where(small, series, direct)
    return out if out.ndim else float(out)


def _logistic(hyperparams: dict) -> LikelihoodSpec:
    _reject_unknown(hyperparams, (), "logistic")

    def phi(r):
        return _sech_stable(np.sqrt(r) / 2.0)

    def phi_prime(r):
        r = np.asarray(r, dtype=float)
        tiny = r < 1e-300
        safe = np.where(tiny, 1.0, r)
        u = np.sqrt(safe) / 2.0
        val = -np.tanh(u) * _sech_stable(u) / (4.0 * np.sqrt(safe))
        out = np.where(tiny, -0.125, val)
        return out if out.ndim else float(out)

    def log_phi(r):
        u = np.sqrt(np.asarray(r, dtype=float)) / 2.0
        return math.log(2.0) - u - np.log1p(np.exp(-2.0 * u))

    return LikelihoodSpec(
        name="logistic",
        hyperparams={},
        support=BINARY,
        log_norm_const=-math.log(2.0),
        g=lambda y: np.asarray(y, dtype=float) / 2.0,
        alpha=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        beta=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        gamma=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        phi=phi,
        phi_prime=phi_prime,
        log_phi=log_phi,
        log_phi_curv=_logistic_log_phi_curv,
    )


def _bayesian_svm(hyperparams: dict) -> LikelihoodSpec:
    _reject_unknown(hyperparams, (), "bayesian-svm")
    return LikelihoodSpec(
        name="bayesian-svm",
        hyperparams={},
        support=BINARY,
        log_norm_const=-1.0,
        g=lambda y: np.asarray(y, dtype=float),
        alpha=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        beta=lambda y: 2.0 * np.asarray(y, dtype=float),
        gamma=lambda y: np.ones_like(np.asarray(y, dtype=float)),
        phi=lambda r: np.exp(-np.sqrt(r)),
        phi_prime=lambda r: -np.exp(-np.sqrt(r)) / (2.0 * np.sqrt(r)),
        log_phi=lambda r: -np.sqrt(r),
        log_phi_curv=lambda r: 1.0 / (4.0 * np.asarray(r, dtype=float) ** 1.5),
        singular_at_zero=True,
    )


def _matern32(hyperparams: dict) -> LikelihoodSpec:
    _reject_unknown(hyperparams, ("rho",), "matern32")
    rho = _require_positive(hyperparams, "rho", "matern32")
    alpha, beta, gamma = _residual_coeffs()

    def _t(r):
        return np.sqrt(3.0 * r) / rho

    return LikelihoodSpec(
        name="matern32",
        hyperparams={"rho": rho},
        support=REGRESSION,
        log_norm_const=0.5 * math.log(3.0) - math.log(4.0 * rho),
        g=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        phi=lambda r: (1.0 + _t(r)) * np.exp(-_t(r)),
        phi_prime=lambda r: -(1.5 / rho**2) * np.exp(-_t(r)),
        log_phi=lambda r: np.log1p(_t(r)) - _t(r),
        # Second cumulant of the base mixing law diverges as r -> 0.
        log_phi_curv=lambda r: 2.25 / (rho**4 * _t(r) * (1.0 + _t(r)) ** 2),
    )


_FACTORIES = {
    "student-t": _student_t,
    "laplace": _laplace,
    "logistic": _logistic,
    "bayesian-svm": _bayesian_svm,
    "matern32": _matern32,
}


def make_likelihood(name: str, hyperparams: dict | None = None) -> LikelihoodSpec:
    """Construct one of the shipped likelihood families.

    Parameters
    ----------
    name : str
        One of ``student-t``, ``laplace``, ``logistic``, ``bayesian-svm``,
        ``matern32``.
    hyperparams : dict, optional
        Family hyperparameters (``nu`` for student-t, ``beta`` for laplace,
        ``rho`` for matern32).  Logistic and bayesian-svm take none.
    """
    if name not in _FACTORIES:
        raise ConstraintError(
            f"unknown likelihood '{name}'; available: {list(_FACTORIES)}"
        )
    return _FACTORIES[name](dict(hyperparams or {}))


def check_support(spec: LikelihoodSpec, y) -> np.ndarray:
    """Validate targets against the likelihood support, return as float array."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y)):
        raise DomainError("targets contain non-finite values")
    if spec.support == BINARY and not np.all(np.isin(y, (-1.0, 1.0))):
        bad = y[~np.isin(y, (-1.0, 1.0))][:5]
        raise DomainError(
            f"binary likelihood '{spec.name}' requires targets in {{-1, +1}}, "
            f"got e.g. {bad.tolist()}"
        )
    return y


def quad_form(spec: LikelihoodSpec, y, f) -> np.ndarray:
    """Squared residual ||h(f, y)||^2 = alpha - beta*f + gamma*f^2, clipped at 0."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    q = spec.alpha(y) - spec.beta(y) * f + spec.gamma(y) * f**2
    return np.clip(q, 0.0, None)


def log_likelihood(spec: LikelihoodSpec, y, f):
    """Pointwise log p(y | f); finite for all finite f."""
    y_arr = check_support(spec, y)
    f_arr = np.atleast_1d(np.asarray(f, dtype=float))
    y_arr, f_arr = np.broadcast_arrays(y_arr, f_arr)
    out = spec.log_norm_const + spec.g(y_arr) * f_arr + spec.log_phi(
        quad_form(spec, y_arr, f_arr)
    )
    if np.isscalar(y) and np.isscalar(f):
        return float(out[0] if out.ndim else out)
    return out
