"""Dataset loading, standardization, splitting and synthetic generators."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .kernels import KernelConfig, chol_jitter, gram
from .likelihoods import BINARY, REGRESSION, LikelihoodSpec

_SYNTH_GUARD = 10_000


@dataclass
class Dataset:
    """Standardized features, targets and the standardization record.

    Features are stored column-standardized (population convention: the
    1/n variance); the per-column mean and sd allow exact inverse
    transforms.  Binary targets live in {-1, +1}.
    """

    X: np.ndarray
    y: np.ndarray
    task: str
    x_mean: np.ndarray
    x_sd: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def raw_features(self) -> np.ndarray:
        return self.X * self.x_sd + self.x_mean


def standardize(X: np.ndarray):
    """Column-wise zero-mean unit-variance transform (1/n convention).

    Constant columns get sd clamped to 1 with a warning instead of a
    division by zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = sd == 0.0
    if np.any(constant):
        warnings.warn(
            f"constant feature column(s) {np.flatnonzero(constant).tolist()};"
            " sd clamped to 1",
            stacklevel=2,
        )
        sd = np.where(constant, 1.0, sd)
    return (X - mean) / sd, mean, sd


def _map_binary(y: np.ndarray) -> np.ndarray:
    values = set(np.unique(y).tolist())
    if values <= {0.0, 1.0}:
        return 2.0 * y - 1.0
    if values <= {-1.0, 1.0}:
        return y
    raise DomainError(
        f"binary task requires labels in {{0,1}} or {{-1,+1}}, got {sorted(values)[:6]}"
    )


def load_csv(path, target="last", task: str = REGRESSION) -> Dataset:
    """Load a delimited numeric file, auto-detecting an optional header.

    ``target`` selects the target column by index, by name (header
    required) or ``"last"``.  Features are standardized; binary labels are
    mapped to {-1, +1}.
    """
    if task not in (REGRESSION, BINARY):
        raise DomainError(f"task must be '{REGRESSION}' or '{BINARY}', got {task!r}")
    with open(path, newline="") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if not rows:
        raise DomainError(f"{path}: empty file")
    header = None
    try:
        [float(cell) for cell in rows[0]]
    except ValueError:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
    data = np.empty((len(rows), len(rows[0])))
    bad_rows = []
    for i, row in enumerate(rows):
        try:
            if len(row) != data.shape[1]:
                raise ValueError
            data[i] = [float(cell) for cell in row]
        except ValueError:
            bad_rows.append(i + 1 + (header is not None))
    if bad_rows:
        raise DomainError(
            f"{path}: unparseable or ragged row(s) {bad_rows[:10]}"
        )
    if not np.all(np.isfinite(data)):
        rows_bad = sorted(set(np.nonzero(~np.isfinite(data))[0].tolist()))
        raise DomainError(
            f"{path}: non-finite values in row(s) {[r + 1 for r in rows_bad[:10]]}"
        )
    if target == "last":
        t_idx = data.shape[1] - 1
    elif isinstance(target, str) and not target.lstrip("-").isdigit():
        if header is None or target not in header:
            raise DomainError(f"target column {target!r} not found in header {header}")
        t_idx = header.index(target)
    else:
        t_idx = int(target)
        if not -data.shape[1] <= t_idx < data.shape[1]:
            raise DomainError(f"target column index {t_idx} out of range")
    y = data[:, t_idx]
    X = np.delete(data, t_idx % data.shape[1], axis=1)
    if task == BINARY:
        y = _map_binary(y)
    Xs, mean, sd = standardize(X)
    return Dataset(X=Xs, y=y, task=task, x_mean=mean, x_sd=sd)


def split(ds: Dataset, test_fraction: float, seed: int):
    """Deterministic shuffled split; standardization refit on train only."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(
            f"test fraction must lie strictly in (0, 1), got {test_fraction}"
        )
    n = ds.n
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    raw = ds.raw_features()
    X_train, mean, sd = standardize(raw[train_idx])
    X_test = (raw[test_idx] - mean) / sd
    train = Dataset(X=X_train, y=ds.y[train_idx], task=ds.task,
                    x_mean=mean, x_sd=sd)
    test = Dataset(X=X_test, y=ds.y[test_idx], task=ds.task,
                   x_mean=mean, x_sd=sd)
    return train, test


def _matern32_noise(rho: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # (1+t)e^{-t}/2 on t >= 0 is a half/half mixture of Exp(1) and Gamma(2,1).
    t = np.where(
        rng.uniform(size=size) < 0.5,
        rng.exponential(size=size),
        rng.gamma(2.0, size=size),
    )
    sign = np.where(rng.uniform(size=size) < 0.5, 1.0, -1.0)
    return sign * t * rho / np.sqrt(3.0)


def synth(kind: str, n: int, d: int, kernel_cfg: KernelConfig,
          lik: LikelihoodSpec, seed: int) -> Dataset:
    """Synthetic datasets: a GP-regression draw or two labeled blobs."""
    if n < 1 or d < 1:
        raise DomainError("n and d must be >= 1")
    if n > _SYNTH_GUARD:
        raise DomainError(
            f"synthetic n = {n} exceeds the dense-sampling guard ({_SYNTH_GUARD})"
        )
    rng = np.random.default_rng(seed)
    if kind == "gp-regression":
        if lik.support != REGRESSION:
            raise DomainError(
                f"gp-regression synthesis needs a regression likelihood,"
                f" got '{lik.name}'"
            )
        X, mean, sd = standardize(rng.standard_normal((n, d)))
        kfac = chol_jitter(gram(X, None, kernel_cfg), kernel_cfg.jitter)
        f = kfac.L @ rng.standard_normal(n)
        if lik.name == "student-t":
            noise = rng.standard_t(lik.hyperparams["nu"], size=n)
        elif lik.name == "laplace":
            noise = rng.laplace(0.0, lik.hyperparams["beta"], size=n)
        elif lik.name == "matern32":
            noise = _matern32_noise(lik.hyperparams["rho"], n, rng)
        else:
            raise DomainError(f"no residual sampler for '{lik.name}'")
        return Dataset(X=X, y=f + noise, task=REGRESSION, x_mean=mean, x_sd=sd)
    if kind == "two-blobs-classification":
        labels = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        offset = 1.5 / np.sqrt(d)
        X = rng.standard_normal((n, d)) + labels[:, None] * offset
        Xs, mean, sd = standardize(X)
        return Dataset(X=Xs, y=labels, task=BINARY, x_mean=mean, x_sd=sd)
    raise DomainError(
        f"unknown synthetic kind {kind!r}; use 'gp-regression' or"
        " 'two-blobs-classification'"
    )
