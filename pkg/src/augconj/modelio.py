"""Model serialization (JSON metadata + column-major binary payload) and
run manifests.

A saved model is a ``<prefix>.json`` / ``<prefix>.bin`` pair: the JSON
carries the kernel and likelihood configuration plus the layout of every
array in the binary payload; arrays are stored as float64 bytes in
column-major order.  Byte output is deterministic for identical inputs,
which is what makes rerun-to-identical-hash checks possible.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .cavi import FullGPModel, GaussianPosterior
from .errors import DomainError
from .gibbs import ChainStore
from .kernels import CholeskyFactor, KernelConfig
from .likelihoods import LikelihoodSpec, make_likelihood
from .svgp import SparseModel

FORMAT_NAME = "augconj-model"
FORMAT_VERSION = 1


def _kernel_meta(cfg: KernelConfig) -> dict:
    return {
        "variance": cfg.variance,
        "lengthscales": cfg.lengthscales.tolist(),
        "jitter": cfg.jitter,
    }


def _kernel_from_meta(meta: dict) -> KernelConfig:
    return KernelConfig(
        variance=meta["variance"],
        lengthscales=np.array(meta["lengthscales"]),
        jitter=meta["jitter"],
    )


def _factor_from(L: np.ndarray, jitter: float) -> CholeskyFactor:
    return CholeskyFactor(L=L, jitter=jitter, matrix=L @ L.T)


def _pack(arrays: dict) -> tuple[bytes, list]:
    payload = bytearray()
    layout = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = arr.tobytes(order="F")
        layout.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    return bytes(payload), layout


def _unpack(payload: bytes, layout: list) -> dict:
    arrays = {}
    for entry in layout:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.float64).reshape(
            entry["shape"], order="F"
        )
        arrays[entry["name"]] = np.ascontiguousarray(arr)
    return arrays


def _dump_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def save_model(prefix, source, lik: LikelihoodSpec, extra: dict | None = None) -> None:
    """Write ``<prefix>.json`` and ``<prefix>.bin`` for a fitted posterior."""
    prefix = Path(prefix)
    meta = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "likelihood": {"name": lik.name, "hyperparams": lik.hyperparams},
    }
    if extra:
        meta["extra"] = extra
    if isinstance(source, FullGPModel):
        meta["type"] = "full-gp"
        meta["kernel"] = _kernel_meta(source.kernel)
        meta["cov_jitter"] = source.posterior.cov_factor.jitter
        payload, layout = _pack({
            "X": source.X,
            "mean": source.posterior.mean,
            "cov_L": source.posterior.cov_factor.L,
            "prior_mean": source.posterior.prior_mean,
        })
    elif isinstance(source, SparseModel):
        meta["type"] = "sparse"
        meta["kernel"] = _kernel_meta(source.kernel)
        meta["cov_jitter"] = source.cov_factor.jitter
        meta["kz_jitter"] = source.kz_factor.jitter
        payload, layout = _pack({
            "Z": source.Z,
            "mean": source.mean,
            "cov_L": source.cov_factor.L,
            "prior_mean": source.prior_mean,
        })
    elif isinstance(source, ChainStore):
        meta["type"] = "gibbs"
        meta["kernel"] = _kernel_meta(source.kernel)
        meta["burn_in"] = source.burn_in
        meta["thin"] = source.thin
        meta["seeds"] = source.seeds
        payload, layout = _pack({
            "X": source.X,
            "f_samples": source.pooled(),
            "prior_mean": source.prior_mean,
            "chain_shape": np.array(source.f_samples.shape, dtype=float),
        })
    else:
        raise DomainError(f"cannot serialize {type(source).__name__}")
    meta["arrays"] = layout
    _dump_json(prefix.with_suffix(".json"), meta)
    prefix.with_suffix(".bin").write_bytes(payload)


def load_model(prefix):
    """Load a saved pair; returns (source object, likelihood spec, meta)."""
    prefix = Path(prefix)
    json_path = prefix if prefix.suffix == ".json" else prefix.with_suffix(".json")
    meta = json.loads(json_path.read_text())
    if meta.get("format") != FORMAT_NAME:
        raise DomainError(f"{json_path}: not an {FORMAT_NAME} file")
    payload = json_path.with_suffix(".bin").read_bytes()
    arrays = _unpack(payload, meta["arrays"])
    lik = make_likelihood(
        meta["likelihood"]["name"], meta["likelihood"]["hyperparams"]
    )
    kernel = _kernel_from_meta(meta["kernel"])
    if meta["type"] == "full-gp":
        posterior = GaussianPosterior(
            mean=arrays["mean"],
            cov_factor=_factor_from(arrays["cov_L"], meta["cov_jitter"]),
            prior_mean=arrays["prior_mean"],
        )
        return FullGPModel(posterior=posterior, X=arrays["X"], kernel=kernel), lik, meta
    if meta["type"] == "sparse":
        from .kernels import chol_jitter, gram

        Z = arrays["Z"]
        kz = chol_jitter(gram(Z, None, kernel), meta["kz_jitter"])
        model = SparseModel(
            Z=Z,
            kz_factor=kz,
            mean=arrays["mean"],
            cov_factor=_factor_from(arrays["cov_L"], meta["cov_jitter"]),
            prior_mean=arrays["prior_mean"],
            kernel=kernel,
        )
        return model, lik, meta
    if meta["type"] == "gibbs":
        shape = tuple(int(v) for v in arrays["chain_shape"])
        store = ChainStore(
            f_samples=arrays["f_samples"].reshape(shape),
            omega_samples=None,
            seeds=meta["seeds"],
            burn_in=meta["burn_in"],
            thin=meta["thin"],
            X=arrays["X"],
            kernel=kernel,
            prior_mean=arrays["prior_mean"],
        )
        return store, lik, meta
    raise DomainError(f"unknown model type {meta['type']!r}")


def save_chain_csvs(out_dir, store: ChainStore) -> list:
    """One CSV per chain, rows are retained samples, columns f_1..f_n."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = store.f_samples.shape[-1]
    header = ",".join(f"f_{i + 1}" for i in range(n))
    paths = []
    for ci in range(store.n_chains):
        path = out_dir / f"chain_{ci:02d}.csv"
        np.savetxt(path, store.f_samples[ci], fmt="%.17g", delimiter=",",
                   header=header, comments="")
        paths.append(path)
    return paths


def load_chain_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def save_trace_csv(path, trace) -> None:
    rows = np.column_stack([
        trace.iterations, trace.elbo, trace.max_change, trace.seconds
    ])
    np.savetxt(path, rows, fmt="%.17g", delimiter=",",
               header="iteration,elbo,delta,seconds", comments="")


def fingerprint_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def fingerprint_file(path) -> str:
    return fingerprint_bytes(Path(path).read_bytes())


def fingerprint_arrays(*arrays) -> str:
    digest = hashlib.sha256()
    for arr in arrays:
        digest.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return digest.hexdigest()


def write_manifest(path, config: dict, seed, timings: dict,
                   dataset_fingerprint: str, version: str) -> None:
    """One manifest per run; its config block reproduces the run exactly."""
    manifest = {
        "tool": "augconj",
        "version": version,
        "seed": seed,
        "config": config,
        "dataset_sha256": dataset_fingerprint,
        "timings_seconds": timings,
    }
    _dump_json(Path(path), manifest)
