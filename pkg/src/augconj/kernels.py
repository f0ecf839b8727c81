"""ARD squared-exponential kernel and jittered Cholesky factorization.

Every downstream formula that involves K^{-1} goes through triangular
solves against the factor held in :class:`CholeskyFactor`; the kernel
matrix is never inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConstraintError, DomainError, NumericalError

DEFAULT_JITTER = 1e-6
_MAX_JITTER = 1e-2


@dataclass(frozen=True)
class KernelConfig:
    """Variance, per-dimension lengthscales and the factorization jitter.

    A single lengthscale broadcasts over all input dimensions.
    """

    variance: float = 1.0
    lengthscales: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "jitter", float(self.jitter))
        if not self.variance > 0:
            raise ConstraintError(f"variance must be > 0, got {self.variance}")
        if ls.ndim != 1 or not np.all(ls > 0):
            raise ConstraintError("lengthscales must be a 1-d array of positives")
        if self.jitter < 0:
            raise ConstraintError(f"jitter must be >= 0, got {self.jitter}")

    def lengthscales_for_dim(self, d: int) -> np.ndarray:
        if self.lengthscales.size == d:
            return self.lengthscales
        if self.lengthscales.size == 1:
            return np.full(d, self.lengthscales[0])
        raise DomainError(
            f"kernel has {self.lengthscales.size} lengthscales but data has {d} columns"
        )


def gram(X: np.ndarray, X2: np.ndarray | None, cfg: KernelConfig) -> np.ndarray:
    """Kernel matrix k(x, x') = variance * exp(-sum_d (x_d - x'_d)^2 / theta_d^2).

    With ``X2=None`` the symmetric Gram matrix of ``X`` is returned with an
    exact diagonal.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    symmetric = X2 is None
    X2 = X if symmetric else np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != X2.shape[1]:
        raise DomainError(
            f"input dimension mismatch: {X.shape[1]} vs {X2.shape[1]} columns"
        )
    theta = cfg.lengthscales_for_dim(X.shape[1])
    A = X / theta
    B = X2 / theta
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.clip(sq, 0.0, None, out=sq)
    K = cfg.variance * np.exp(-sq)
    if symmetric:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, cfg.variance)
    return K


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with ``matrix = L @ L.T``.

    ``matrix`` is the (jitter-adjusted) matrix the factor represents, kept
    so downstream identities stay exactly consistent with the factor.
    ``jitter`` records the diagonal shift that was actually applied.
    """

    L: np.ndarray
    jitter: float
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """matrix^{-1} b via two triangular solves."""
        return scipy.linalg.cho_solve((self.L, True), b)

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """L^{-1} b."""
        return scipy.linalg.solve_triangular(self.L, b, lower=True)

    def inverse(self) -> np.ndarray:
        """Dense matrix^{-1}, built from the factor."""
        Linv = scipy.linalg.solve_triangular(
            self.L, np.eye(self.n), lower=True
        )
        return Linv.T @ Linv


def chol_jitter(K: np.ndarray, jitter: float = DEFAULT_JITTER) -> CholeskyFactor:
    """Factor K + j*I, escalating j tenfold up to 1e-2 until it succeeds."""
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    scale = max(np.max(np.abs(K)), 1.0)
    if np.max(np.abs(K - K.T)) > 1e-8 * scale:
        raise DomainError("matrix to factor is not symmetric")
    j = float(jitter)
    while True:
        try:
            Kj = K if j == 0.0 else K + j * np.eye(n)
            L = np.linalg.cholesky(Kj)
            return CholeskyFactor(L=L, jitter=j, matrix=Kj)
        except np.linalg.LinAlgError:
            j = 1e-12 if j == 0.0 else j * 10.0
            if j > _MAX_JITTER:
                eigs = np.linalg.eigvalsh(K)
                raise NumericalError(
                    "Cholesky failed even with jitter"
                    f" {_MAX_JITTER}: eigenvalue range [{eigs[0]:.3e},"
                    f" {eigs[-1]:.3e}], size {n}"
                ) from None
