"""Covariance functions with a fixed total amplitude.

Three stationary families are supported.  In each of them the
self-covariance ``k(x, x)`` equals the fixed amplitude ``A``; the free
hyperparameters only redistribute that variance or change the
length-scales.  Inverse squared length-scales (``1 / l**2``) are stored
instead of length-scales.

==================  ====================  ==========================================
family              theta                 k(a, b), r = a - b
==================  ====================  ==========================================
``se_const``        (w, t)                w exp(-t r^2 / 2) + (A - w)
``se_sum``          (w, t1, t2)           w exp(-t1 r^2 / 2) + (A - w) exp(-t2 r^2 / 2)
``rq``              (alpha, t)            A (1 + t r^2 / (2 alpha))^(-alpha)
==================  ====================  ==========================================
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

FAMILIES = ("se_const", "se_sum", "rq")

N_THETA = {"se_const": 2, "se_sum": 3, "rq": 2}

DEFAULT_ALPHA_BOUNDS = (0.1, 10.0)


@dataclass(frozen=True)
class KernelSpec:
    """A covariance function and its (partly fixed) parameters.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    theta : tuple of float
        Free hyperparameters, layout per family (see module docstring).
    amplitude : float
        Prior variance ``A`` of the modelled function. Never optimized.
    jitter : float
        Added to the diagonal of self-covariance matrices only.
    """

    family: str
    theta: tuple
    amplitude: float
    jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "jitter", float(self.jitter))
        validate(self)

    def with_theta(self, theta):
        return KernelSpec(self.family, tuple(theta), self.amplitude, self.jitter)

    @property
    def length_scales(self):
        if self.family == "se_const":
            return (self.theta[1] ** -0.5,)
        if self.family == "se_sum":
            return (self.theta[1] ** -0.5, self.theta[2] ** -0.5)
        return (self.theta[1] ** -0.5,)


@dataclass(frozen=True)
class HyperBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ConfigurationError("hyperparameter bounds must satisfy lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


def validate(spec):
    if spec.family not in FAMILIES:
        raise ConfigurationError(f"unknown kernel family {spec.family!r}")
    if len(spec.theta) != N_THETA[spec.family]:
        raise ConfigurationError(
            f"{spec.family} expects {N_THETA[spec.family]} hyperparameters, "
            f"got {len(spec.theta)}")
    if not all(np.isfinite(spec.theta)):
        raise ConfigurationError(f"non-finite hyperparameters {spec.theta}")
    if not spec.amplitude > 0:
        raise ConfigurationError("kernel amplitude must be positive")
    if not spec.jitter >= 0:
        raise ConfigurationError("jitter must be non-negative")
    A = spec.amplitude
    th = spec.theta
    if spec.family in ("se_const", "se_sum"):
        weight, inv_sq = [th[0]], th[1:]
    else:
        weight, inv_sq = [], th[1:]
        if th[0] <= 0:
            raise ConfigurationError(f"rational-quadratic alpha must be > 0, got {th[0]}")
    for w in weight:
        if not 0.0 <= w <= A:
            raise ConfigurationError(f"amplitude weight {w} outside [0, {A}]")
    for t in inv_sq:
        if t <= 0:
            raise ConfigurationError(f"inverse squared length-scale must be > 0, got {t}")


def _pairwise(xs, ys):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    return xs[:, None] - ys[None, :]


def _k_of_r(spec, r):
    A = spec.amplitude
    th = spec.theta
    r2 = r * r
    if spec.family == "se_const":
        return th[0] * np.exp(-0.5 * th[1] * r2) + (A - th[0])
    if spec.family == "se_sum":
        return th[0] * np.exp(-0.5 * th[1] * r2) + (A - th[0]) * np.exp(-0.5 * th[2] * r2)
    alpha, t = th
    return A * (1.0 + t * r2 / (2.0 * alpha)) ** (-alpha)


def eval_kernel(spec, xi, xj):
    """Covariance between two scalar inputs (no jitter)."""
    return float(_k_of_r(spec, float(xi) - float(xj)))


def cov_matrix(spec, xs, ys, self_cov=False):
    """Matrix of ``k(xs[i], ys[j])``; jitter is added to the diagonal when
    ``self_cov`` marks ``xs`` and ``ys`` as the same point set."""
    K = _k_of_r(spec, _pairwise(xs, ys))
    if self_cov:
        if K.shape[0] != K.shape[1]:
            raise ConfigurationError("self_cov requires xs and ys of equal length")
        K[np.diag_indices_from(K)] += spec.jitter
    return K


def kernel_diag(spec, xs):
    """``k(x, x)`` for every input; equal to the amplitude for all families."""
    return np.full(np.shape(np.atleast_1d(xs)), spec.amplitude)


def cov_gradients(spec, xs, ys):
    """Derivatives of ``cov_matrix(spec, xs, ys)`` (jitter excluded).

    Returns
    -------
    d_theta : ndarray, shape (p, len(xs), len(ys))
        Derivative with respect to each free hyperparameter.
    d_first : ndarray, shape (len(xs), len(ys))
        Derivative of ``k(a, b)`` with respect to its first argument ``a``.
        For these stationary kernels the derivative with respect to ``b``
        is ``-d_first``.
    """
    r = _pairwise(xs, ys)
    r2 = r * r
    A = spec.amplitude
    th = spec.theta
    if spec.family == "se_const":
        w, t = th
        e = np.exp(-0.5 * t * r2)
        d_theta = np.stack([e - 1.0, -0.5 * w * r2 * e])
        d_first = -w * t * r * e
    elif spec.family == "se_sum":
        w, t1, t2 = th
        e1 = np.exp(-0.5 * t1 * r2)
        e2 = np.exp(-0.5 * t2 * r2)
        d_theta = np.stack([e1 - e2, -0.5 * w * r2 * e1, -0.5 * (A - w) * r2 * e2])
        d_first = -(w * t1 * e1 + (A - w) * t2 * e2) * r
    else:
        alpha, t = th
        base = 1.0 + t * r2 / (2.0 * alpha)
        k = A * base ** (-alpha)
        d_alpha = k * (-np.log(base) + t * r2 / (2.0 * alpha * base))
        d_t = -0.5 * A * r2 * base ** (-alpha - 1.0)
        d_theta = np.stack([d_alpha, d_t])
        d_first = -A * t * r * base ** (-alpha - 1.0)
    return d_theta, d_first


def default_bounds(spec, data_range, length_scale_bounds=None,
                   alpha_bounds=DEFAULT_ALPHA_BOUNDS):
    """Box constraints for ``spec.theta``.

    Length-scales default to ``[0.05, 2] * data_range`` and are converted to
    bounds on ``1 / l**2``. Amplitude weights are confined to ``[0, A]``.
    """
    if not data_range > 0:
        raise ConfigurationError(f"data range must be positive, got {data_range}")
    if length_scale_bounds is None:
        l_lo, l_hi = 0.05 * data_range, 2.0 * data_range
    else:
        l_lo, l_hi = map(float, length_scale_bounds)
    if not 0 < l_lo <= l_hi:
        raise ConfigurationError(f"invalid length-scale bounds ({l_lo}, {l_hi})")
    t_lo, t_hi = 1.0 / l_hi ** 2, 1.0 / l_lo ** 2
    A = spec.amplitude
    if spec.family == "se_const":
        return HyperBounds([0.0, t_lo], [A, t_hi])
    if spec.family == "se_sum":
        return HyperBounds([0.0, t_lo, t_lo], [A, t_hi, t_hi])
    a_lo, a_hi = map(float, alpha_bounds)
    if not 0 < a_lo <= a_hi:
        raise ConfigurationError(f"invalid alpha bounds ({a_lo}, {a_hi})")
    return HyperBounds([a_lo, t_lo], [a_hi, t_hi])


def random_theta(spec, bounds, rng):
    """Draw hyperparameters inside ``bounds``: weights and alpha uniformly,
    length-scales uniformly in ``l`` rather than in ``1 / l**2``."""
    lo, hi = bounds.lower, bounds.upper
    theta = np.empty_like(lo)
    for i in range(len(lo)):
        is_inv_sq = i >= 1
        if is_inv_sq:
            l = rng.uniform(hi[i] ** -0.5, lo[i] ** -0.5)
            theta[i] = np.clip(1.0 / l ** 2, lo[i], hi[i])
        else:
            theta[i] = rng.uniform(lo[i], hi[i])
    return spec.with_theta(theta)
