"""Reference estimators: histogram binning and Nadaraya-Watson regression
of the first two conditional moments of the increments."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .evaluation import silverman_bandwidth

DEFAULT_BINS = 10


@dataclass
class BinnedEstimate:
    bin_edges: np.ndarray
    f_hat: np.ndarray
    g_hat: np.ndarray
    counts: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def empty(self):
        return self.counts == 0

    def on_grid(self, grid, fill=None):
        """Piecewise-constant evaluation.  Outside the binned range the edge
        bins are used; empty bins give NaN unless ``fill='nearest'``."""
        grid = np.asarray(grid, dtype=float)
        idx = np.clip(np.searchsorted(self.bin_edges, grid, side="right") - 1,
                      0, self.counts.size - 1)
        f, g = self.f_hat, self.g_hat
        if fill == "nearest":
            full = np.flatnonzero(~self.empty)
            if full.size == 0:
                raise UsageError("all bins are empty")
            c = self.centers
            nearest = full[np.argmin(np.abs(c[:, None] - c[full][None, :]), axis=1)]
            f, g = f[nearest], g[nearest]
        elif fill is not None:
            raise UsageError(f"unknown fill mode {fill!r}")
        return f[idx], g[idx]


def binning_estimator(dataset, n_bins=DEFAULT_BINS):
    """Per-bin ``mean(dx) / dt`` and ``mean(dx**2) / dt``.

    Increments are assigned to the bin holding their left end point.  Bins
    without samples are NaN.
    """
    n_bins = int(n_bins)
    if n_bins < 1:
        raise ConfigurationError("n_bins must be >= 1")
    if n_bins > dataset.n:
        raise ConfigurationError(f"n_bins = {n_bins} exceeds the number of increments {dataset.n}")
    xs, dx, dt = dataset.inputs, dataset.increments, dataset.dt
    edges = np.linspace(xs.min(), xs.max(), n_bins + 1)
    idx = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    s1 = np.bincount(idx, weights=dx, minlength=n_bins)
    s2 = np.bincount(idx, weights=dx * dx, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_hat = np.where(counts > 0, s1 / counts / dt, np.nan)
        g_hat = np.where(counts > 0, s2 / counts / dt, np.nan)
    return BinnedEstimate(edges, f_hat, g_hat, counts)


def nw_estimator(dataset, bandwidth, grid, chunk=128):
    """Gaussian-weighted local means of ``dx / dt`` and ``dx**2 / dt``.

    ``bandwidth='auto'`` uses the Silverman rule on the series.  Grid points
    where every weight underflows are NaN.

    Returns
    -------
    f_hat, g_hat : ndarray
    """
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise UsageError(f"bandwidth must be positive or 'auto', got {bandwidth!r}")
        h = silverman_bandwidth(dataset.x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ConfigurationError("bandwidth must be positive")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    xs, dx, dt = dataset.inputs, dataset.increments, dataset.dt
    f_hat = np.empty(grid.size)
    g_hat = np.empty(grid.size)
    for start in range(0, grid.size, chunk):
        u = (grid[start:start + chunk, None] - xs[None, :]) / h
        w = np.exp(-0.5 * u * u)
        wsum = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f_hat[start:start + chunk] = np.where(wsum > 0, (w @ dx) / wsum / dt, np.nan)
            g_hat[start:start + chunk] = np.where(wsum > 0, (w @ (dx * dx)) / wsum / dt, np.nan)
    return f_hat, g_hat
