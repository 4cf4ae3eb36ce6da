"""Posterior predictive curves for the drift and the diffusion."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, DecompositionError, InferenceError
from .kernels import cov_matrix
from .numerics import factor_psd, solve_psd


@dataclass
class PosteriorCurve:
    grid: np.ndarray
    drift_mean: np.ndarray
    drift_var: np.ndarray
    s_mean: np.ndarray
    s_var: np.ndarray
    g_median: np.ndarray
    g_lower: np.ndarray
    g_upper: np.ndarray
    g_mean: np.ndarray
    ci_level: float = 0.95

    COLUMNS = ("x", "f_mean", "f_var", "s_mean", "s_var",
               "g_median", "g_lower", "g_upper", "g_mean")

    def columns(self):
        return dict(zip(self.COLUMNS, (
            self.grid, self.drift_mean, self.drift_var, self.s_mean, self.s_var,
            self.g_median, self.g_lower, self.g_upper, self.g_mean)))


def _factor(spec, x_m):
    K = cov_matrix(spec, x_m, x_m, self_cov=True)
    try:
        return factor_psd(K)
    except DecompositionError:
        retry = 10.0 * max(spec.jitter, 1e-10 * spec.amplitude)
        try:
            return factor_psd(K + retry * np.eye(K.shape[0]))
        except DecompositionError as exc:
            raise InferenceError("pseudo-input covariance is not positive definite") from exc


def _gaussian_predictive(spec, factor, x_m, grid, centred_mean, cov):
    K_gm = cov_matrix(spec, grid, x_m)
    W = solve_psd(factor, K_gm.T)
    mean = W.T @ centred_mean
    var = (spec.amplitude - np.einsum("ij,ji->i", K_gm, W)
           + np.einsum("ij,ij->j", W, cov @ W))
    return mean, np.maximum(var, 0.0)


def _grid(grid):
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise ConfigurationError("prediction grid must be nonempty and finite")
    return grid


def predict_drift(state, grid):
    """Mean and variance of ``f(x*)`` under the fitted drift factor."""
    grid = _grid(grid)
    fac = state.proj.Kmm if state.proj is not None else _factor(state.kernel_f, state.x_m)
    return _gaussian_predictive(state.kernel_f, fac, state.x_m, grid, state.mu_f, state.F)


def predict_diffusion(state, grid, ci_level=0.95):
    """Moments of ``s(x*)`` and the induced lognormal summaries of ``g = exp(s)``.

    Returns
    -------
    s_mean, s_var, g_median, g_lower, g_upper, g_mean : ndarray
        ``g_lower``/``g_upper`` are the ``(1 -+ ci_level) / 2`` quantiles.
    """
    if not 0 < ci_level < 1:
        raise ConfigurationError(f"ci_level must lie in (0, 1), got {ci_level}")
    grid = _grid(grid)
    fac = state.proj.Jmm if state.proj is not None else _factor(state.kernel_s, state.x_m)
    mean, var = _gaussian_predictive(state.kernel_s, fac, state.x_m, grid,
                                     state.mu_s - state.v, state.S)
    s_mean = state.v + mean
    z = norm.ppf(0.5 * (1.0 + ci_level))
    sd = np.sqrt(var)
    return (s_mean, var, np.exp(s_mean), np.exp(s_mean - z * sd), np.exp(s_mean + z * sd),
            np.exp(s_mean + 0.5 * var))


def default_grid(lo, hi, n=200):
    return np.linspace(lo, hi, n)


def predict(state, grid, ci_level=0.95):
    f_mean, f_var = predict_drift(state, grid)
    s_mean, s_var, g_med, g_lo, g_hi, g_mean = predict_diffusion(state, grid, ci_level)
    return PosteriorCurve(np.asarray(grid, dtype=float), f_mean, f_var, s_mean, s_var,
                          g_med, g_lo, g_hi, g_mean, ci_level)
