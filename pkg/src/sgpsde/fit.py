"""GEM-style fitting: full variational E steps interleaved with capped
(partial) maximization of the lower bound over the hyperparameters."""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import logging
import math
from typing import Optional

import numpy as np

from .errors import ConfigurationError, FitError, NumericalError, SgpsdeError
from .inference import (
    Diagnostics, build_projections, compute_psi, compute_zeta, lower_bound,
    lower_bound_gradient, modified_lower_bound, prior_state, update_diffusion,
    update_drift)
from .kernels import FAMILIES, KernelSpec, default_bounds, random_theta
from .numerics import BoundedProblem, minimize_bounded

log = logging.getLogger(__name__)

_PLACEHOLDER_THETA = {"se_const": (0.0, 1.0), "se_sum": (0.0, 1.0, 1.0), "rq": (1.0, 1.0)}


@dataclass
class FitConfig:
    m: int = 10
    restarts: int = 3
    max_em_iterations: int = 200
    m_step_inner_iterations: int = 5
    em_tolerance: float = 1e-6
    seed: int = 0
    A_f: float = 25.0
    A_g: float = 25.0
    length_scale_bounds_f: Optional[tuple] = None
    length_scale_bounds_s: Optional[tuple] = None
    pseudo_input_noise: Optional[float] = None
    kernel_f: str = "se_const"
    kernel_s: str = "se_const"
    alpha_bounds: tuple = (0.1, 10.0)
    jitter: float = 1e-6
    m_step: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("m", "restarts", "max_em_iterations", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.m_step_inner_iterations < 0:
            raise ConfigurationError("m_step_inner_iterations must be >= 0")
        if not (self.A_f > 0 and self.A_g > 0):
            raise ConfigurationError("A_f and A_g must be positive")
        if not self.em_tolerance > 0:
            raise ConfigurationError("em_tolerance must be positive")
        if self.jitter < 0:
            raise ConfigurationError("jitter must be non-negative")
        for fam in (self.kernel_f, self.kernel_s):
            if fam not in FAMILIES:
                raise ConfigurationError(f"unknown kernel family {fam!r}")
        if self.pseudo_input_noise is not None and self.pseudo_input_noise < 0:
            raise ConfigurationError("pseudo_input_noise must be non-negative")

    def noise_fraction(self):
        if self.pseudo_input_noise is not None:
            return float(self.pseudo_input_noise)
        return 0.25 / (self.m - 1) if self.m > 1 else 0.0


@dataclass
class RestartResult:
    index: int
    state: Optional[object]
    L: float
    L_prime: float
    elbo_trace: list
    converged: bool
    iterations: int
    diagnostics: dict
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class FitResult:
    state: object
    L: float
    L_prime: float
    elbo_trace: list
    converged: bool
    iterations: int
    diagnostics: dict
    config: FitConfig
    dataset_fingerprint: str
    restarts: list = field(default_factory=list)
    best_restart: int = 0


def init_pseudo_inputs(x, m, noise_frac=0.0, rng=None):
    """Empirical quantiles of ``x`` at ``k / (m - 1)``, optionally jittered.

    The result is sorted, strictly increasing and inside ``[min x, max x]``.
    """
    x = np.asarray(x, dtype=float)
    m = int(m)
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    if m > np.unique(x).size:
        raise ConfigurationError(
            f"m = {m} exceeds the number of distinct sample values ({np.unique(x).size})")
    lo, hi = float(x.min()), float(x.max())
    if m == 1:
        return np.array([float(np.median(x))])
    xm = np.quantile(x, np.arange(m) / (m - 1))
    width = hi - lo
    if noise_frac > 0:
        if rng is None:
            raise ConfigurationError("an rng is required when noise_frac > 0")
        xm = xm + rng.uniform(-noise_frac * width, noise_frac * width, size=m)
    xm = np.clip(np.sort(xm), lo, hi)
    return _strictly_increasing(xm, lo, hi, 1e-6 * width)


def _strictly_increasing(xm, lo, hi, gap):
    xm = xm.copy()
    for k in range(1, xm.size):
        if xm[k] <= xm[k - 1]:
            xm[k] = xm[k - 1] + gap
    if xm[-1] > hi:
        xm[-1] = hi
        for k in range(xm.size - 2, -1, -1):
            if xm[k] >= xm[k + 1]:
                xm[k] = xm[k + 1] - gap
    return np.clip(xm, lo, hi)


def init_diffusion_prior(dataset, A_g):
    """Prior mean ``v`` and variance ``A_s`` of ``s = log g``.

    Chosen so that the lognormal ``g`` has mean ``Var[dx] / dt`` and variance
    ``A_g``.
    """
    scale = float(np.var(dataset.increments, ddof=1)) / dataset.dt
    if not scale > 0:
        raise ConfigurationError("series increments have zero variance")
    A_s = math.log1p(A_g / scale ** 2)
    v = math.log(scale) - 0.5 * A_s
    return v, A_s


def heuristic_m(x, l):
    """Rule-of-thumb number of pseudo-inputs: ``floor(range / l)``, at least 2."""
    if not l > 0:
        raise ConfigurationError("length-scale must be positive")
    x = np.asarray(x, dtype=float)
    return max(2, int(math.floor((x.max() - x.min()) / l)))


class _Packer:
    """Flat vector <-> (theta_f, theta_s, v, x_m)."""

    def __init__(self, state):
        self.nf = len(state.kernel_f.theta)
        self.ns = len(state.kernel_s.theta)
        self.m = state.m

    def pack(self, state):
        return np.concatenate([state.kernel_f.theta, state.kernel_s.theta,
                               [state.v], state.x_m])

    def pack_grad(self, g):
        return np.concatenate([g["theta_f"], g["theta_s"], [g["v"]], g["x_m"]])

    def apply(self, state, h):
        nf, ns = self.nf, self.ns
        state.kernel_f = state.kernel_f.with_theta(h[:nf])
        state.kernel_s = state.kernel_s.with_theta(h[nf:nf + ns])
        state.v = float(h[nf + ns])
        state.x_m = np.array(h[nf + ns + 1:], dtype=float)
        return state


def _refresh_stats(dataset, state, diagnostics=None):
    return compute_zeta(state, diagnostics), compute_psi(dataset, state)


def _current_bound(dataset, state):
    zeta, psi = _refresh_stats(dataset, state)
    return lower_bound(dataset, state, zeta, psi)


def e_step(dataset, state, diagnostics):
    """Drift update, then diffusion update, each with refreshed statistics."""
    zeta = compute_zeta(state, diagnostics)
    state.mu_f, state.F = update_drift(dataset, state, zeta)
    psi = compute_psi(dataset, state)
    state.mu_s, state.S, info = update_diffusion(dataset, state, psi, diagnostics)
    return info


def _sort_pseudo_inputs(state):
    order = np.argsort(state.x_m, kind="stable")
    if np.all(order == np.arange(order.size)):
        return
    state.x_m = state.x_m[order]
    state.mu_f = state.mu_f[order]
    state.mu_s = state.mu_s[order]
    state.F = state.F[np.ix_(order, order)]
    state.S = state.S[np.ix_(order, order)]


def m_step(dataset, state, bounds, cap, L_before):
    """Increase the bound over hyperparameters with at most ``cap`` quasi-Newton
    iterations.  A result that lowers the bound is discarded and the cap halved.

    Returns the bound after the step and the number of rejections.
    """
    packer = _Packer(state)
    lower, upper = bounds
    h0 = packer.pack(state)
    rejections = 0

    def objective(h):
        trial = packer.apply(state.copy(), h)
        try:
            build_projections(dataset, trial)
            zeta, psi = _refresh_stats(dataset, trial)
            L = lower_bound(dataset, trial, zeta, psi)
            g = packer.pack_grad(lower_bound_gradient(dataset, trial, zeta, psi))
        except (SgpsdeError, FloatingPointError, np.linalg.LinAlgError):
            return math.inf, np.zeros_like(h)
        return -L, -g

    while cap >= 1:
        try:
            res = minimize_bounded(
                BoundedProblem(objective, lower, upper, max_iterations=cap), h0)
        except NumericalError:
            break
        if -res.value >= L_before:
            packer.apply(state, res.x)
            _sort_pseudo_inputs(state)
            build_projections(dataset, state)
            return -res.value, rejections
        rejections += 1
        cap //= 2
    build_projections(dataset, state)
    return L_before, rejections


def _hyper_bounds(dataset, state, config):
    xr = dataset.data_range
    bf = default_bounds(state.kernel_f, xr, config.length_scale_bounds_f, config.alpha_bounds)
    bs = default_bounds(state.kernel_s, xr, config.length_scale_bounds_s, config.alpha_bounds)
    m = state.m
    lo = np.concatenate([bf.lower, bs.lower, [-np.inf], np.full(m, dataset.x.min())])
    hi = np.concatenate([bf.upper, bs.upper, [np.inf], np.full(m, dataset.x.max())])
    return (bf, bs), (lo, hi)


def initial_state(dataset, config, rng):
    xm = init_pseudo_inputs(dataset.x, config.m, config.noise_fraction(), rng)
    v, A_s = init_diffusion_prior(dataset, config.A_g)
    kf = KernelSpec(config.kernel_f, _PLACEHOLDER_THETA[config.kernel_f], config.A_f,
                    config.jitter * config.A_f)
    ks = KernelSpec(config.kernel_s, _PLACEHOLDER_THETA[config.kernel_s], A_s,
                    config.jitter * A_s)
    (bf, bs), _ = _hyper_bounds(dataset, prior_state(xm, kf, ks, v), config)
    kf = random_theta(kf, bf, rng)
    ks = random_theta(ks, bs, rng)
    return prior_state(xm, kf, ks, v)


def fit_restart(dataset, config, rng, index=0):
    diag = Diagnostics()
    counters = {"laplace_nonconverged": 0, "m_step_rejections": 0}
    trace = []
    try:
        state = initial_state(dataset, config, rng)
        build_projections(dataset, state, diag)
        _, bounds = _hyper_bounds(dataset, state, config)
        trace.append(_current_bound(dataset, state))
        converged = False
        it = 0
        for it in range(1, config.max_em_iterations + 1):
            info = e_step(dataset, state, diag)
            if not info.converged:
                counters["laplace_nonconverged"] += 1
            L = _current_bound(dataset, state)
            if config.m_step and config.m_step_inner_iterations > 0:
                L, rej = m_step(dataset, state, bounds, config.m_step_inner_iterations, L)
                counters["m_step_rejections"] += rej
            trace.append(L)
            if abs(trace[-1] - trace[-2]) <= config.em_tolerance * abs(trace[-1]):
                converged = True
                break
        final = Diagnostics()
        zeta, psi = _refresh_stats(dataset, state, final)
        L = lower_bound(dataset, state, zeta, psi)
        if final.overflow_count:
            raise NumericalError(
                f"exponential overflow in {final.overflow_count} terms at the final state")
        diagnostics = dict(asdict(diag), **counters)
        return RestartResult(index, state, L, modified_lower_bound(L, state.m), trace,
                             converged, it, diagnostics)
    except (SgpsdeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.warning("restart %d failed: %s", index, exc)
        diagnostics = dict(asdict(diag), **counters)
        return RestartResult(index, None, -math.inf, -math.inf, trace, False, len(trace),
                             diagnostics, error=f"{type(exc).__name__}: {exc}")


def _run_restart(args):
    dataset, config, seed_seq, index = args
    return fit_restart(dataset, config, np.random.default_rng(seed_seq), index)


def fit(dataset, config=None):
    """Fit drift and diffusion; the restart with the largest ``L'`` wins."""
    config = config or FitConfig()
    if config.m > 1 and dataset.n < 2:
        raise ConfigurationError("series too short")
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    jobs = [(dataset, config, s, k) for k, s in enumerate(seeds)]
    if config.workers > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(j) for j in jobs]
    ok = [r for r in results if r.ok]
    if not ok:
        raise FitError(
            "all restarts failed: " + "; ".join(f"#{r.index}: {r.error}" for r in results),
            restart_diagnostics=[r.diagnostics for r in results])
    best = max(ok, key=lambda r: (r.L_prime, -r.index))
    return FitResult(
        state=best.state, L=best.L, L_prime=best.L_prime, elbo_trace=best.elbo_trace,
        converged=best.converged, iterations=best.iterations,
        diagnostics=best.diagnostics, config=config,
        dataset_fingerprint=dataset.fingerprint(), restarts=results,
        best_restart=best.index)
