"""Command-line entry point (``sgpsde``)."""
import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import baselines, evaluation, fileio
from .errors import SgpsdeError, UsageError
from .fit import FitConfig, fit
from .predict import default_grid, predict
from .simulator import BUILTIN, SimConfig, builtin_model, simulate, vectorized

WORKERS_ENV = "SGPSDE_WORKERS"
EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


def _env_workers():
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv_list(raw):
    return [item.strip() for item in raw.split(",") if item.strip()]


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args):
    model = builtin_model(args.model)
    cfg = SimConfig(n_samples=args.n, dt=args.dt, x0=args.x0, seed=args.seed,
                    burn_in=args.burn_in)
    data = simulate(model, cfg)
    fileio.write_series(args.out, data)
    if data.info.get("clips"):
        print(f"clipped steps: {data.info['clips']}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(args):
    data = fileio.load_series(args.input, args.dt)
    config = fileio.load_config(args.config) if args.config else FitConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    workers = _env_workers()
    if workers is not None:
        config = replace(config, workers=workers)
    res = fit(data, config)
    fileio.save_model(res.state, args.out, fit_result=res, dataset=data)
    print(f"L = {res.L!r}")
    print(f"L' = {res.L_prime!r}")
    print(f"iterations = {res.iterations}")
    print(f"converged = {str(res.converged).lower()}")
    return EXIT_OK if res.converged else EXIT_BUDGET


def _training_range(state, doc):
    ds = doc.get("dataset")
    if ds:
        return float.fromhex(ds["x_min"]), float.fromhex(ds["x_max"])
    return float(state.x_m.min()), float(state.x_m.max())


def cmd_predict(args):
    state, doc = fileio.read_model_file(args.model)
    lo, hi = _training_range(state, doc)
    lo = lo if args.grid_min is None else args.grid_min
    hi = hi if args.grid_max is None else args.grid_max
    if not hi > lo or args.grid_n < 2:
        raise UsageError("grid must satisfy grid-min < grid-max and grid-n >= 2")
    curve = predict(state, default_grid(lo, hi, args.grid_n), args.ci)
    _write_text(args.out, fileio.curves_to_csv(curve.columns()))
    return EXIT_OK


def _curve_column(curves, names, path):
    for name in names:
        if name in curves:
            return curves[name]
    raise UsageError(f"{path}: none of the columns {names} present")


def _on_grid(x, y, grid):
    keep = np.isfinite(y)
    if not keep.any():
        raise UsageError("curve has no finite values")
    return np.interp(grid, x[keep], y[keep])


def cmd_evaluate(args):
    model = builtin_model(args.truth)
    states = fileio.load_states(args.series)
    curves = fileio.load_curves(args.curves)
    x = _curve_column(curves, ("x",), args.curves)
    f_hat = _curve_column(curves, ("f_mean", "f_hat"), args.curves)
    g_hat = _curve_column(curves, ("g_median", "g_hat"), args.curves)
    h = evaluation.silverman_bandwidth(states)
    grid = evaluation.evaluation_grid(states, h)
    density, _ = evaluation.kde_density(states, grid, h)
    table = evaluation.ErrorTable()
    for coef, truth, est in (("drift", model.drift, f_hat), ("diffusion", model.diffusion_g, g_hat)):
        err = evaluation.integrated_error(vectorized(truth)(grid), _on_grid(x, est, grid),
                                          density, grid)
        table.records.append(evaluation.ErrorRecord(model.name, "curves", coef, 0, err))
    _write_text(args.out, table.to_csv())
    return EXIT_OK


def cmd_baseline(args):
    data = fileio.load_series(args.input, args.dt)
    lo, hi = float(data.x.min()), float(data.x.max())
    grid = default_grid(lo, hi, args.grid_n)
    if args.method == "binning":
        est = baselines.binning_estimator(data, args.bins)
        f_hat, g_hat = est.on_grid(grid)
    else:
        bw = args.bandwidth
        f_hat, g_hat = baselines.nw_estimator(data, "auto" if bw in (None, "auto") else float(bw), grid)
    _write_text(args.out, fileio.curves_to_csv({"x": grid, "f_hat": f_hat, "g_hat": g_hat}))
    return EXIT_OK


def cmd_benchmark(args):
    config = fileio.load_config(args.config) if args.config else evaluation.benchmark_fit_config()
    workers = args.workers or _env_workers() or 1
    table = evaluation.benchmark(
        _csv_list(args.models), _csv_list(args.estimators), args.replicates,
        SimConfig(n_samples=args.n, dt=args.dt), config, seed=args.seed, workers=workers)
    _write_text(args.out, table.to_csv())
    if args.summary:
        _write_text(args.summary, table.summary_csv())
    return EXIT_OK


def cmd_preprocess(args):
    if not args.log_returns:
        raise UsageError("no preprocessing step selected (use --log-returns)")
    series = fileio.log_returns(fileio.load_prices(args.input))
    _write_text(args.out, fileio.curves_to_csv({"x": series}))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="sgpsde", description="Sparse GP estimation of SDE drift and diffusion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    models = sorted(BUILTIN)

    s = sub.add_parser("simulate", help="simulate a built-in model")
    s.add_argument("--model", required=True, type=str.upper, choices=models)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--x0", type=float)
    s.add_argument("--burn-in", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="fit the sparse GP model to a series")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="tabulate posterior curves of a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--grid-min", type=float)
    s.add_argument("--grid-max", type=float)
    s.add_argument("--grid-n", type=int, default=200)
    s.add_argument("--ci", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="score curves against a built-in model")
    s.add_argument("--truth", required=True, type=str.upper, choices=models)
    s.add_argument("--curves", required=True)
    s.add_argument("--series", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="binning or Nadaraya-Watson estimates")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--method", required=True, choices=("binning", "nw"))
    group = s.add_mutually_exclusive_group()
    group.add_argument("--bins", type=int, default=baselines.DEFAULT_BINS)
    group.add_argument("--bandwidth")
    s.add_argument("--grid-n", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("benchmark", help="replicate benchmark over built-in models")
    s.add_argument("--models", required=True, help="comma-separated, e.g. M1,M3")
    s.add_argument("--estimators", default="sgp,binning,nw")
    s.add_argument("--replicates", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--config")
    s.add_argument("--workers", type=int)
    s.add_argument("--summary")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("preprocess", help="turn a price series into log returns")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--log-returns", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)
    return p


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SgpsdeError as exc:
        print(f"{exc.code}: {_one_line(exc)}", file=sys.stderr)
    except OSError as exc:
        print(f"E_IO: {_one_line(exc)}", file=sys.stderr)
    except KeyboardInterrupt:
        print("E_INTERRUPTED: interrupted", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
