"""Density-weighted integrated error and the replicate benchmark."""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io
import math

import numpy as np

from .errors import ConfigurationError, SgpsdeError, UsageError
from .fit import FitConfig, fit
from .predict import predict
from .simulator import BUILTIN, builtin_model, path_rng, simulate, vectorized

KDE_GRID_POINTS = 512
DENSITY_CUTOFF = 1e-10
BENCHMARK_LENGTH_SCALE_BOUNDS = (0.25, 2.0)


def benchmark_fit_config(**overrides):
    """Fit settings of the replicate benchmark: m = 10, three restarts and
    absolute length-scale bounds (0.25, 2) for both kernels."""
    base = dict(m=10, restarts=3, length_scale_bounds_f=BENCHMARK_LENGTH_SCALE_BOUNDS,
                length_scale_bounds_s=BENCHMARK_LENGTH_SCALE_BOUNDS)
    base.update(overrides)
    return FitConfig(**base)


def silverman_bandwidth(samples):
    """``0.9 * min(sd, IQR / 1.34) * n^(-1/5)``."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < 2:
        raise ConfigurationError("need at least two samples for a bandwidth")
    sd = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd
    if not sd > 0:
        raise ConfigurationError("degenerate sample: zero spread")
    return 0.9 * spread * n ** -0.2


def kde_density(samples, grid, bandwidth=None, chunk=256):
    """Gaussian kernel density estimate of ``samples`` evaluated on ``grid``.

    Returns ``(density, bandwidth)``; the Silverman bandwidth is used when
    none is given.
    """
    samples = np.asarray(samples, dtype=float)
    grid = np.asarray(grid, dtype=float)
    h = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ConfigurationError("bandwidth must be positive")
    dens = np.empty(grid.size)
    norm = 1.0 / (samples.size * h * math.sqrt(2.0 * math.pi))
    for start in range(0, grid.size, chunk):
        u = (grid[start:start + chunk, None] - samples[None, :]) / h
        dens[start:start + chunk] = np.exp(-0.5 * u * u).sum(axis=1) * norm
    return dens, h


def evaluation_grid(samples, bandwidth, n=KDE_GRID_POINTS):
    """Grid spanning the sample range widened by three bandwidths."""
    samples = np.asarray(samples, dtype=float)
    return np.linspace(samples.min() - 3 * bandwidth, samples.max() + 3 * bandwidth, n)


def integrated_error(truth, estimate, density, grid):
    """Trapezoid approximation of ``integral |truth - estimate| p(x) dx``.

    ``truth`` is a callable or an array on ``grid``.  Points where the density
    falls below ``1e-10 * max(density)`` contribute nothing, so the estimate
    may be undefined (NaN) there.
    """
    grid = np.asarray(grid, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    density = np.asarray(density, dtype=float)
    if not (grid.shape == estimate.shape == density.shape):
        raise UsageError("estimate, density and grid must share one grid")
    t = np.asarray(truth(grid) if callable(truth) else truth, dtype=float)
    if t.shape != grid.shape:
        raise UsageError("truth must match the grid")
    active = density > DENSITY_CUTOFF * density.max()
    integrand = np.zeros_like(grid)
    integrand[active] = np.abs(t[active] - estimate[active]) * density[active]
    if not np.all(np.isfinite(integrand)):
        raise UsageError("estimate is undefined where the density is not negligible")
    return float(np.trapezoid(integrand, grid))


# -- benchmark ---------------------------------------------------------------

@dataclass
class ErrorRecord:
    model: str
    estimator: str
    coefficient: str
    replicate: int
    error: float
    status: str = "ok"


@dataclass
class ErrorTable:
    records: list = field(default_factory=list)

    HEADER = ("model", "estimator", "coefficient", "replicate", "error")

    def rows(self, model=None, estimator=None, coefficient=None, ok_only=True):
        return [r for r in self.records
                if (model is None or r.model == model)
                and (estimator is None or r.estimator == estimator)
                and (coefficient is None or r.coefficient == coefficient)
                and (not ok_only or r.status == "ok")]

    def errors(self, model, estimator, coefficient):
        rows = sorted(self.rows(model, estimator, coefficient), key=lambda r: r.replicate)
        return np.array([r.error for r in rows])

    def summary(self):
        """``{(model, estimator, coefficient): (mean, n_ok, n_failed)}``."""
        keys = sorted({(r.model, r.estimator, r.coefficient) for r in self.records})
        out = {}
        for key in keys:
            ok = self.errors(*key)
            failed = len(self.rows(*key, ok_only=False)) - ok.size
            out[key] = (float(ok.mean()) if ok.size else math.nan, int(ok.size), failed)
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in sorted(self.records, key=lambda r: (r.model, r.estimator, r.coefficient, r.replicate)):
            w.writerow([r.model, r.estimator, r.coefficient, r.replicate,
                        repr(float(r.error)) if r.status == "ok" else "failed"])
        return buf.getvalue()

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "estimator", "coefficient", "mean_error", "replicates", "failed"])
        for (mo, es, co), (mean, n, nf) in self.summary().items():
            w.writerow([mo, es, co, repr(mean), n, nf])
        return buf.getvalue()


def _estimate_curves(name, dataset, grid, model, fit_config, seed):
    """Drift and diffusion estimates of one estimator on ``grid``."""
    from . import baselines  # baselines imports this module for its bandwidth rule
    if name == "truth":
        return vectorized(model.drift)(grid), vectorized(model.diffusion_g)(grid), {}
    if name == "binning":
        est = baselines.binning_estimator(dataset, baselines.DEFAULT_BINS)
        f, g = est.on_grid(grid, fill="nearest")
        return f, g, {}
    if name == "nw":
        f, g = baselines.nw_estimator(dataset, "auto", grid)
        return f, g, {}
    if name == "sgp":
        res = fit(dataset, replace(fit_config, seed=seed, workers=1))
        curve = predict(res.state, grid)
        traces = [r.elbo_trace for r in res.restarts if r.ok]
        return curve.drift_mean, curve.g_median, {"elbo_traces": traces,
                                                  "converged": res.converged}
    raise UsageError(f"unknown estimator {name!r}")


ESTIMATORS = ("sgp", "binning", "nw", "truth")


def _replicate(args):
    model_id, model_index, replicate, estimators, sim_cfg, fit_config, seed = args
    model = builtin_model(model_id)
    dataset = simulate(model, sim_cfg, path_rng(seed, model_index, replicate, 0))
    records, traces = [], {}
    try:
        h = silverman_bandwidth(dataset.x)
        grid = evaluation_grid(dataset.x, h)
        density, _ = kde_density(dataset.x, grid, h)
    except SgpsdeError as exc:
        for est in estimators:
            for coef in ("drift", "diffusion"):
                records.append(ErrorRecord(model_id, est, coef, replicate, math.nan, f"failed: {exc}"))
        return records, traces
    f_true = vectorized(model.drift)(grid)
    g_true = vectorized(model.diffusion_g)(grid)
    fit_seed = int(np.random.SeedSequence(seed, spawn_key=(model_index, replicate, 1))
                   .generate_state(1)[0])
    for est in estimators:
        try:
            f_hat, g_hat, extra = _estimate_curves(est, dataset, grid, model, fit_config, fit_seed)
            errs = (integrated_error(f_true, f_hat, density, grid),
                    integrated_error(g_true, g_hat, density, grid))
            for coef, e in zip(("drift", "diffusion"), errs):
                records.append(ErrorRecord(model_id, est, coef, replicate, e))
            if "elbo_traces" in extra:
                traces[(model_id, est, replicate)] = extra["elbo_traces"]
        except SgpsdeError as exc:
            for coef in ("drift", "diffusion"):
                records.append(ErrorRecord(model_id, est, coef, replicate, math.nan, f"failed: {exc}"))
    return records, traces


def benchmark(models, estimators, replicates, sim_cfg, fit_config, seed=0, workers=1,
              return_traces=False):
    """Simulate, estimate and score every ``(model, replicate)`` pair.

    Each pair gets its own random streams derived from ``(seed, model number,
    replicate)``, so results do not depend on ordering or on ``workers``.
    With ``return_traces`` the lower-bound traces of every successful SGP
    restart are returned too, keyed by ``(model, "sgp", replicate)``.
    """
    for est in estimators:
        if est not in ESTIMATORS:
            raise UsageError(f"unknown estimator {est!r}; expected one of {ESTIMATORS}")
    if replicates < 1:
        raise ConfigurationError("replicates must be >= 1")
    jobs = []
    for model_id in models:
        model_id = str(model_id).upper()
        if model_id not in BUILTIN:
            raise UsageError(f"unknown model {model_id!r}")
        model_index = int(model_id[1:])
        for rep in range(replicates):
            jobs.append((model_id, model_index, rep, tuple(estimators), sim_cfg, fit_config, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_replicate, jobs))
    else:
        outputs = [_replicate(j) for j in jobs]
    table = ErrorTable()
    traces = {}
    for recs, tr in outputs:
        table.records.extend(recs)
        traces.update(tr)
    if return_traces:
        return table, traces
    return table
