"""Command-line interface: fit, sample, diagnose, predict, benchmark.

Every run resolves its configuration, seeds all randomness from --seed and
writes a JSON manifest whose ``config`` block can be fed back through
``--config`` to reproduce the run.  Exit codes: 0 success/converged, 2 fit
hit max iterations without converging (outputs still written), 1 error.

Heavy numerical imports happen inside the command handlers so that
``--threads`` can cap the BLAS/OpenMP pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

_GIBBS_SIZE_WARN = 2000


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_ERROR)


def _apply_threads_env(argv) -> None:
    """Honor --threads before numpy is imported anywhere."""
    threads = None
    for i, token in enumerate(argv):
        if token == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif token.startswith("--threads="):
            threads = token.split("=", 1)[1]
    if threads is not None and threads.isdigit():
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _add_common(parser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="root seed for all randomness in the run")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap for BLAS/OpenMP threads (default: all cores)")
    parser.add_argument("--out-dir", default=".",
                        help="directory for all output files")
    parser.add_argument("--config", default=None,
                        help="JSON config (or run manifest) supplying flag "
                             "defaults; explicit flags win")


def _add_data(parser) -> None:
    parser.add_argument("--data", required=True, help="CSV dataset path")
    parser.add_argument("--target", default="last",
                        help="target column: index, name, or 'last'")
    parser.add_argument("--task", choices=("regression", "binary"),
                        default="regression", help="prediction task")
    parser.add_argument("--test-frac", type=float, default=0.0,
                        help="held-out fraction (0 disables the split)")


def _add_likelihood(parser) -> None:
    parser.add_argument("--likelihood", required=True,
                        choices=("student-t", "laplace", "logistic",
                                 "bayesian-svm", "matern32"))
    parser.add_argument("--lik-param", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="likelihood hyperparameter (repeatable), e.g. nu=3")


def _add_kernel(parser) -> None:
    parser.add_argument("--variance", type=float, default=1.0,
                        help="kernel variance")
    parser.add_argument("--lengthscale", default="1.0",
                        help="lengthscale: scalar broadcast or comma-separated "
                             "per-dimension values")
    parser.add_argument("--jitter", type=float, default=1e-6,
                        help="Cholesky jitter floor")


def _add_bromwich(parser) -> None:
    parser.add_argument("--laplace-terms", type=int, default=64,
                        help="contour evaluations in the transform inversion")
    parser.add_argument("--laplace-A", type=float, default=18.4, dest="laplace_a",
                        help="inversion discretization parameter")
    parser.add_argument("--newton-tol", type=float, default=1e-8,
                        help="inverse-CDF stopping tolerance")
    parser.add_argument("--newton-maxiter", type=int, default=100,
                        help="Newton iterations before bisection fallback")


def build_parser():
    parser = _Parser(prog="augconj",
                     description="Augmented conjugate inference for GP models "
                                 "with super-Gaussian likelihoods.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    fit = sub.add_parser("fit", help="variational fit (cavi or svi)")
    _add_common(fit)
    _add_data(fit)
    _add_likelihood(fit)
    _add_kernel(fit)
    fit.add_argument("--method", choices=("cavi", "svi"), default="cavi")
    fit.add_argument("--max-iter", type=int, default=200,
                     help="cavi sweeps before giving up")
    fit.add_argument("--tol", type=float, default=1e-6,
                     help="relative ELBO / mean-change convergence tolerance")
    fit.add_argument("--inducing", type=int, default=200,
                     help="svi: number of inducing points")
    fit.add_argument("--batch", type=int, default=100,
                     help="svi: minibatch size")
    fit.add_argument("--epochs", type=int, default=100,
                     help="svi: maximum epochs")
    fit.add_argument("--lr-tau", type=float, default=1.0,
                     help="svi: learning-rate delay tau")
    fit.add_argument("--lr-kappa", type=float, default=0.51,
                     help="svi: learning-rate forgetting exponent")
    fit.add_argument("--hyperopt", action="store_true",
                     help="svi: ADAM step on kernel hyperparameters per epoch")
    fit.set_defaults(func=cmd_fit)

    sample = sub.add_parser("sample", help="exact Gibbs sampling")
    _add_common(sample)
    _add_data(sample)
    _add_likelihood(sample)
    _add_kernel(sample)
    _add_bromwich(sample)
    sample.add_argument("--chains", type=int, default=5)
    sample.add_argument("--samples", type=int, default=10_000,
                        help="sweeps per chain including burn-in")
    sample.add_argument("--burn-in", type=int, default=1000)
    sample.add_argument("--thin", type=int, default=1)
    sample.set_defaults(func=cmd_sample)

    diag = sub.add_parser("diagnose", help="chain diagnostics from CSVs")
    _add_common(diag)
    diag.add_argument("chain_files", nargs="+", help="chain CSV paths")
    diag.add_argument("--max-lag", type=int, default=20)
    diag.set_defaults(func=cmd_diagnose)

    pred = sub.add_parser("predict", help="held-out metrics for a saved model")
    _add_common(pred)
    pred.add_argument("--model", required=True,
                      help="model file prefix (or its .json)")
    pred.add_argument("--test", required=True, help="test CSV path")
    pred.add_argument("--target", default="last")
    pred.set_defaults(func=cmd_predict)

    bench = sub.add_parser(
        "benchmark",
        help="fit while recording (seconds, elbo, nll, metric) checkpoints")
    _add_common(bench)
    _add_data(bench)
    _add_likelihood(bench)
    _add_kernel(bench)
    bench.add_argument("--method", choices=("cavi", "svi"), default="svi")
    bench.add_argument("--max-iter", type=int, default=200)
    bench.add_argument("--tol", type=float, default=1e-6)
    bench.add_argument("--inducing", type=int, default=200)
    bench.add_argument("--batch", type=int, default=100)
    bench.add_argument("--epochs", type=int, default=100)
    bench.add_argument("--lr-tau", type=float, default=1.0)
    bench.add_argument("--lr-kappa", type=float, default=0.51)
    bench.add_argument("--hyperopt", action="store_true")
    bench.add_argument("--checkpoint-interval", type=float, default=0.25,
                       help="seconds until the first checkpoint")
    bench.add_argument("--checkpoint-factor", type=float, default=1.5,
                       help="geometric growth of the checkpoint spacing")
    bench.set_defaults(func=cmd_benchmark)
    return parser


def _parse_lik_params(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--lik-param expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = float(value)
    return out


def _resolve_config(args) -> dict:
    """Reproducible flag snapshot for the manifest."""
    skip = {"func", "config"}
    config = {}
    for key, value in vars(args).items():
        if key in skip:
            continue
        config[key] = value
    return config


def _kernel_from_args(args, d: int):
    import numpy as np

    from .kernels import KernelConfig

    raw = str(args.lengthscale)
    values = np.array([float(v) for v in raw.split(",")])
    if values.size not in (1, d):
        raise ValueError(
            f"--lengthscale gives {values.size} values for {d} feature columns"
        )
    return KernelConfig(variance=args.variance, lengthscales=values,
                        jitter=args.jitter)


def _load_dataset(args):
    from .dataio import load_csv, split

    ds = load_csv(args.data, target=args.target, task=args.task)
    if args.test_frac and args.test_frac > 0:
        return split(ds, args.test_frac, args.seed)
    return ds, None


def _manifest(args, out_dir: Path, timings: dict, data_path=None) -> None:
    from . import __version__
    from .modelio import fingerprint_file, write_manifest

    fingerprint = fingerprint_file(data_path) if data_path else ""
    write_manifest(out_dir / "manifest.json", _resolve_config(args),
                   args.seed, timings, fingerprint, __version__)


def cmd_fit(args) -> int:
    from .cavi import FullGPModel, fit_cavi
    from .likelihoods import make_likelihood
    from .modelio import save_model, save_trace_csv
    from .svgp import SviOptions, fit_svi

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train, _ = _load_dataset(args)
    lik = make_likelihood(args.likelihood, _parse_lik_params(args.lik_param))
    kcfg = _kernel_from_args(args, train.d)
    t_load = time.perf_counter() - t0

    t0 = time.perf_counter()
    if args.method == "cavi":
        q, _, trace = fit_cavi(train.X, train.y, lik, kcfg,
                               max_iter=args.max_iter, tol=args.tol,
                               seed=args.seed)
        model = FullGPModel(posterior=q, X=train.X, kernel=kcfg)
    else:
        opts = SviOptions(batch_size=args.batch, n_inducing=args.inducing,
                          max_epochs=args.epochs, lr_tau=args.lr_tau,
                          lr_kappa=args.lr_kappa, seed=args.seed,
                          tol=args.tol, hyperopt=args.hyperopt)
        model, trace = fit_svi(train.X, train.y, lik, kcfg, opts)
    t_fit = time.perf_counter() - t0

    save_model(out_dir / "model", model, lik,
               extra={"method": args.method, "seed": args.seed})
    save_trace_csv(out_dir / "trace.csv", trace)
    _manifest(args, out_dir,
              {"load": t_load, "fit": t_fit}, data_path=args.data)
    print(f"fit: {args.method} {'converged' if trace.converged else 'max-iter'}"
          f" after {trace.iterations[-1]} iterations, final ELBO"
          f" {trace.elbo[-1]:.6f}")
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def cmd_sample(args) -> int:
    from .augmentation import BromwichConfig
    from .gibbs import run_gibbs
    from .likelihoods import make_likelihood
    from .modelio import save_chain_csvs, save_model

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, _ = _load_dataset(args)
    if train.n > _GIBBS_SIZE_WARN:
        print(f"warning: n = {train.n} exceeds {_GIBBS_SIZE_WARN}; each sweep"
              " is O(n^3) and this run may be very slow", file=sys.stderr)
    lik = make_likelihood(args.likelihood, _parse_lik_params(args.lik_param))
    kcfg = _kernel_from_args(args, train.d)
    bromwich = BromwichConfig(m_terms=args.laplace_terms, a=args.laplace_a)
    t0 = time.perf_counter()
    store = run_gibbs(train.X, train.y, lik, kcfg, n_samples=args.samples,
                      chains=args.chains, burn_in=args.burn_in,
                      thin=args.thin, seed=args.seed, bromwich=bromwich,
                      newton_tol=args.newton_tol,
                      newton_max_iter=args.newton_maxiter)
    t_run = time.perf_counter() - t0
    save_chain_csvs(out_dir, store)
    save_model(out_dir / "model", store, lik, extra={"seed": args.seed})
    _manifest(args, out_dir, {"sample": t_run, **store.timings},
              data_path=args.data)
    print(f"sample: {args.chains} chains x {args.samples} sweeps,"
          f" {store.timings['seconds_per_sample'] * 1e3:.2f} ms/sample")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    import numpy as np

    from .diagnostics import chain_report
    from .modelio import load_chain_csv

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chains = [load_chain_csv(path) for path in args.chain_files]
    n = chains[0].shape[1]
    rng = np.random.default_rng(args.seed)
    coords = sorted(rng.choice(n, size=min(3, n), replace=False).tolist())
    traces = {"mean_f": [c.mean(axis=1) for c in chains]}
    for j in coords:
        traces[f"f_{j}"] = [c[:, j] for c in chains]
    report = chain_report(traces, max_lag=args.max_lag)
    payload = report.to_dict()
    (out_dir / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    lags = np.arange(args.max_lag + 1)
    cols = [lags] + [np.array(payload["scalars"][k]["autocorr"])
                     for k in sorted(payload["scalars"])]
    header = ",".join(["lag"] + sorted(payload["scalars"]))
    np.savetxt(out_dir / "autocorr.csv", np.column_stack(cols),
               fmt="%.17g", delimiter=",", header=header, comments="")
    print(json.dumps(payload["scalars"], sort_keys=True, indent=1))
    print(f"worst lag-1 autocorrelation: {report.worst_lag1:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    import numpy as np

    from .dataio import load_csv
    from .modelio import load_model
    from .predict import evaluate

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    source, lik, _ = load_model(args.model)
    task = "binary" if lik.support == "binary" else "regression"
    test = load_csv(args.test, target=args.target, task=task)
    summary = evaluate(source, test.X, test.y, lik)
    metrics = {
        "task": summary.task,
        "nll": summary.nll,
        "rmse": summary.rmse,
        "error_rate": summary.error_rate,
        "calibrated": summary.calibrated,
        "n_test": int(test.n),
    }
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    cols = [summary.latent_mean, summary.latent_var, summary.log_density]
    header = "latent_mean,latent_var,log_density"
    if summary.prob_positive is not None:
        cols.append(summary.prob_positive)
        header += ",prob_positive"
    np.savetxt(out_dir / "predictions.csv", np.column_stack(cols),
               fmt="%.17g", delimiter=",", header=header, comments="")
    _manifest(args, out_dir, {}, data_path=args.test)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    import numpy as np

    from .cavi import FullGPModel, GaussianPosterior, fit_cavi
    from .likelihoods import make_likelihood
    from .modelio import save_model
    from .predict import evaluate
    from .svgp import SviOptions, fit_svi

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not args.test_frac or args.test_frac <= 0:
        raise ValueError("benchmark requires --test-frac > 0 for a held-out split")
    train, test = _load_dataset(args)
    lik = make_likelihood(args.likelihood, _parse_lik_params(args.lik_param))
    kcfg = _kernel_from_args(args, train.d)

    rows = []
    state = {"next": args.checkpoint_interval, "t0": time.perf_counter()}

    def _metric(summary):
        return summary.error_rate if summary.task == "binary" else summary.rmse

    def _checkpoint(elbo_value, model_like):
        summary = evaluate(model_like, test.X, test.y, lik)
        rows.append((time.perf_counter() - state["t0"], elbo_value,
                     summary.nll, _metric(summary)))

    def callback(iteration, elbo_value, model_like, _aug):
        elapsed = time.perf_counter() - state["t0"]
        if elapsed >= state["next"]:
            if isinstance(model_like, GaussianPosterior):
                model_like = FullGPModel(posterior=model_like, X=train.X,
                                         kernel=kcfg)
            _checkpoint(elbo_value, model_like)
            state["next"] = max(elapsed, state["next"]) * args.checkpoint_factor

    if args.method == "cavi":
        q, _, trace = fit_cavi(train.X, train.y, lik, kcfg,
                               max_iter=args.max_iter, tol=args.tol,
                               seed=args.seed, callback=callback)
        model = FullGPModel(posterior=q, X=train.X, kernel=kcfg)
    else:
        opts = SviOptions(batch_size=args.batch, n_inducing=args.inducing,
                          max_epochs=args.epochs, lr_tau=args.lr_tau,
                          lr_kappa=args.lr_kappa, seed=args.seed,
                          tol=args.tol, hyperopt=args.hyperopt)
        model, trace = fit_svi(train.X, train.y, lik, kcfg, opts,
                               callback=callback)
    _checkpoint(trace.elbo[-1], model)

    np.savetxt(out_dir / "checkpoints.csv", np.array(rows), fmt="%.17g",
               delimiter=",", header="seconds,elbo,nll,metric", comments="")
    save_model(out_dir / "model", model, lik,
               extra={"method": args.method, "seed": args.seed})
    _manifest(args, out_dir, {"benchmark": rows[-1][0]}, data_path=args.data)
    print(f"benchmark: {len(rows)} checkpoints, final nll {rows[-1][2]:.4f},"
          f" final metric {rows[-1][3]:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads_env(argv)
    parser = build_parser()

    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path:
        loaded = json.loads(Path(config_path).read_text())
        defaults = loaded.get("config", loaded)
        defaults = {k: v for k, v in defaults.items() if k != "command"}
        subparsers = parser._subparsers._group_actions[0].choices
        for p in [parser, *subparsers.values()]:
            p.set_defaults(**defaults)
            for action in p._actions:
                if action.required and action.dest in defaults:
                    action.required = False

    args = parser.parse_args(argv)
    from .errors import AugconjError

    try:
        return args.func(args)
    except (AugconjError, ValueError, OSError) as exc:
        print(f"augconj: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
