"""Variational updates for the sparse-GP SDE model.

The drift ``f`` has a zero-mean GP prior with kernel ``kernel_f``; the log
diffusion ``s = log g`` has a GP prior with constant mean ``v`` and kernel
``kernel_s``.  Both are summarized by their values at a shared set of
pseudo-inputs ``x_m``, with Gaussian variational factors
``N(mu_f, F)`` and ``N(mu_s, S)``.

Conditionals of the function values at the series inputs given the
inducing values::

    f | f_m ~ N(A f_m, diag P)                 A = K_Nm K_mm^-1
    s | s_m ~ N(v + B (s_m - v), diag Q)       B = J_Nm J_mm^-1

Only the diagonals of ``P`` and ``Q`` are ever needed.  All solves use
Cholesky factors of ``K_mm``/``J_mm``; the whitened cross-covariances
``C = K_Nm L^-T`` make the m x m systems well conditioned.
"""
from dataclasses import dataclass, field, replace
import math
from typing import Optional

import numpy as np

from .errors import DecompositionError, InferenceError
from .kernels import KernelSpec, cov_gradients, cov_matrix, kernel_diag
from .numerics import PsdFactor, factor_psd, logdet, solve_lower, solve_psd

EXP_CLAMP = 700.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Diagnostics:
    overflow_count: int = 0
    laplace_failures: int = 0
    jitter_retries: int = 0


@dataclass
class Projections:
    """Cached quantities that depend on ``(x_m, kernels)`` but not on the
    variational parameters."""

    Kmm: PsdFactor
    Jmm: PsdFactor
    K_Nm: np.ndarray
    J_Nm: np.ndarray
    Cf: np.ndarray
    Cs: np.ndarray
    A: np.ndarray
    B: np.ndarray
    P_diag: np.ndarray
    Q_diag: np.ndarray
    extra_jitter_f: float = 0.0
    extra_jitter_s: float = 0.0


@dataclass
class SgpState:
    x_m: np.ndarray
    kernel_f: KernelSpec
    kernel_s: KernelSpec
    v: float
    mu_f: np.ndarray
    F: np.ndarray
    mu_s: np.ndarray
    S: np.ndarray
    proj: Optional[Projections] = field(default=None, repr=False)

    @property
    def m(self):
        return len(self.x_m)

    def copy(self):
        return replace(
            self, x_m=self.x_m.copy(), mu_f=self.mu_f.copy(), F=self.F.copy(),
            mu_s=self.mu_s.copy(), S=self.S.copy())


def prior_state(x_m, kernel_f, kernel_s, v):
    """State whose variational factors equal the priors of ``f_m`` and ``s_m``."""
    x_m = np.asarray(x_m, dtype=float)
    m = x_m.size
    Kmm = cov_matrix(kernel_f, x_m, x_m, self_cov=True)
    Jmm = cov_matrix(kernel_s, x_m, x_m, self_cov=True)
    return SgpState(x_m, kernel_f, kernel_s, float(v), np.zeros(m), Kmm,
                    np.full(m, float(v)), Jmm)


def clamped_exp(arg, diagnostics=None):
    over = arg > EXP_CLAMP
    if np.any(over):
        if diagnostics is not None:
            diagnostics.overflow_count += int(np.count_nonzero(over))
        arg = np.minimum(arg, EXP_CLAMP)
    return np.exp(arg)


def _factor_with_retry(M, spec, name, diagnostics):
    try:
        return factor_psd(M), 0.0
    except DecompositionError:
        pass
    extra = 10.0 * max(spec.jitter, 1e-10 * spec.amplitude)
    if diagnostics is not None:
        diagnostics.jitter_retries += 1
    try:
        return factor_psd(M + extra * np.eye(M.shape[0])), extra
    except DecompositionError as exc:
        raise InferenceError(
            f"{name} covariance of the pseudo-inputs is not positive definite "
            f"after jitter retry (pivot {exc.pivot})") from exc


def _project(factor, cross, diag_self):
    C = solve_lower(factor, cross.T).T
    proj = solve_psd(factor, cross.T).T
    resid = diag_self - np.einsum("ij,ij->i", C, C)
    return C, proj, np.maximum(resid, 0.0)


def build_projections(dataset, state, diagnostics=None):
    """Compute and attach the caches ``A, B, P_diag, Q_diag`` and factors."""
    xm = np.asarray(state.x_m, dtype=float)
    if xm.size < 1:
        raise InferenceError("need at least one pseudo-input")
    xs = dataset.inputs
    kf, ks = state.kernel_f, state.kernel_s
    Kfac, ef = _factor_with_retry(cov_matrix(kf, xm, xm, self_cov=True), kf, "drift", diagnostics)
    Jfac, es = _factor_with_retry(cov_matrix(ks, xm, xm, self_cov=True), ks, "diffusion", diagnostics)
    K_Nm = cov_matrix(kf, xs, xm)
    J_Nm = cov_matrix(ks, xs, xm)
    Cf, A, P = _project(Kfac, K_Nm, kernel_diag(kf, xs) + kf.jitter)
    Cs, B, Q = _project(Jfac, J_Nm, kernel_diag(ks, xs) + ks.jitter)
    state.proj = Projections(Kfac, Jfac, K_Nm, J_Nm, Cf, Cs, A, B, P, Q, ef, es)
    return state.proj


def _proj(state):
    if state.proj is None:
        raise InferenceError("projections not built; call build_projections first")
    return state.proj


def compute_zeta(state, diagnostics=None):
    """Expectation of ``exp(-s_i)`` under the diffusion factor."""
    pr = _proj(state)
    d = state.mu_s - state.v
    quad = np.einsum("ij,ij->i", pr.B @ state.S, pr.B)
    arg = -(state.v + pr.B @ d) + 0.5 * (pr.Q_diag + quad)
    return clamped_exp(arg, diagnostics)


def compute_psi(dataset, state):
    """Expectation of ``(dx_i - dt f_i)^2`` under the drift factor."""
    pr = _proj(state)
    dt = dataset.dt
    Am = pr.A @ state.mu_f
    quad = np.einsum("ij,ij->i", pr.A @ state.F, pr.A)
    resid = dataset.increments - dt * Am
    return resid * resid + dt * dt * (pr.P_diag + np.maximum(quad, 0.0))


def _symmetrize(M):
    return 0.5 * (M + M.T)


def update_drift(dataset, state, zeta):
    """Optimal Gaussian factor for ``f_m`` given the diffusion statistics.

    ``F = (K_mm^-1 + dt A^T diag(zeta) A)^-1`` and
    ``mu_f = F A^T (zeta * dx)``, evaluated as
    ``F = L (I + dt C^T Z C)^-1 L^T`` with ``K_mm = L L^T``.
    """
    pr = _proj(state)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta < 0):
        raise InferenceError("zeta must be non-negative")
    dt = dataset.dt
    L = pr.Kmm.lower
    C = pr.Cf
    M = np.eye(L.shape[0]) + dt * (C.T * zeta) @ C
    try:
        Mfac = factor_psd(_symmetrize(M))
    except DecompositionError as exc:
        raise InferenceError("drift precision matrix is not positive definite") from exc
    W = solve_lower(Mfac, L.T)
    F = _symmetrize(W.T @ W)
    mu_f = L @ solve_psd(Mfac, C.T @ (zeta * dataset.increments))
    return mu_f, F


def diffusion_objective(dataset, state, psi, s_m, diagnostics=None):
    """Negative unnormalized log density of the optimal ``s_m`` factor.

    Returns ``(value, gradient)`` with respect to ``s_m``.
    """
    pr = _proj(state)
    u = np.asarray(s_m, dtype=float) - state.v
    Bu = pr.B @ u
    w = psi * clamped_exp(-state.v - Bu + 0.5 * pr.Q_diag, diagnostics) / (2.0 * dataset.dt)
    Jinv_u = solve_psd(pr.Jmm, u)
    value = w.sum() + 0.5 * u @ Jinv_u + 0.5 * Bu.sum()
    grad = -pr.B.T @ w + Jinv_u + 0.5 * pr.B.sum(axis=0)
    return float(value), grad


def diffusion_hessian(dataset, state, psi, s_m):
    """Hessian of :func:`diffusion_objective` (the negated log-density Hessian)."""
    pr = _proj(state)
    u = np.asarray(s_m, dtype=float) - state.v
    w = psi * clamped_exp(-state.v - pr.B @ u + 0.5 * pr.Q_diag) / (2.0 * dataset.dt)
    Jinv = solve_psd(pr.Jmm, np.eye(u.size))
    return _symmetrize((pr.B.T * w) @ pr.B + Jinv)


@dataclass
class LaplaceInfo:
    iterations: int
    converged: bool
    value: float


def update_diffusion(dataset, state, psi, diagnostics=None, max_iterations=100):
    """Laplace approximation of the optimal ``s_m`` factor.

    The mode is found by damped Newton iterations in whitened coordinates
    ``s_m = v + L z`` (``J_mm = L L^T``), warm-started at the current
    ``mu_s``.  The objective is strictly convex in ``z`` with Hessian
    ``C^T diag(w) C + I``.

    Returns
    -------
    mu_s, S : ndarray
    info : LaplaceInfo
    """
    pr = _proj(state)
    dt = dataset.dt
    L = pr.Jmm.lower
    C = pr.Cs
    m = L.shape[0]
    log_w0 = np.log(np.maximum(psi, 1e-300)) - state.v + 0.5 * pr.Q_diag - math.log(2.0 * dt)
    log_w0[psi <= 0] = -np.inf
    half_csum = 0.5 * C.sum(axis=0)

    def evaluate(z):
        Cz = C @ z
        w = clamped_exp(log_w0 - Cz)
        return w.sum() + 0.5 * z @ z + 0.5 * Cz.sum(), w

    z = solve_lower(pr.Jmm, state.mu_s - state.v)
    f, w = evaluate(z)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        g = -C.T @ w + z + half_csum
        H = (C.T * w) @ C + np.eye(m)
        Hfac = factor_psd(_symmetrize(H))
        step = -solve_psd(Hfac, g)
        decrement = -g @ step
        if decrement <= 1e-20 * max(1.0, abs(f)):
            converged = True
            break
        t = 1.0
        while True:
            z_new = z + t * step
            f_new, w_new = evaluate(z_new)
            if np.isfinite(f_new) and f_new <= f - 1e-4 * t * decrement:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if t < 1e-12:
            # No further decrease representable: at the numerical floor.
            converged = decrement <= 1e-10 * max(1.0, abs(f))
            break
        small_step = np.max(np.abs(t * step)) <= 1e-13 * (1.0 + np.max(np.abs(z)))
        z, f, w = z_new, f_new, w_new
        if small_step:
            converged = True
            break
    if not converged and diagnostics is not None:
        diagnostics.laplace_failures += 1
    Cz = C @ z
    n_over = int(np.count_nonzero(log_w0 - Cz > EXP_CLAMP))
    if diagnostics is not None and n_over:
        diagnostics.overflow_count += n_over
    H = (C.T * w) @ C + np.eye(m)
    try:
        Hfac = factor_psd(_symmetrize(H))
    except DecompositionError as exc:
        raise InferenceError("Laplace precision is not positive definite") from exc
    W = solve_lower(Hfac, L.T)
    S = _symmetrize(W.T @ W)
    mu_s = state.v + L @ z
    return mu_s, S, LaplaceInfo(it, converged, float(f))


def lower_bound_terms(dataset, state, zeta, psi):
    """Individual contributions to the evidence lower bound."""
    pr = _proj(state)
    N, dt, m = dataset.n, dataset.dt, state.m
    d = state.mu_s - state.v
    try:
        Ffac = factor_psd(_symmetrize(state.F))
        Sfac = factor_psd(_symmetrize(state.S))
    except DecompositionError as exc:
        raise InferenceError("variational covariance is not positive definite") from exc
    LkF = solve_lower(pr.Kmm, Ffac.lower)
    LjS = solve_lower(pr.Jmm, Sfac.lower)
    wf = solve_lower(pr.Kmm, state.mu_f)
    ws = solve_lower(pr.Jmm, d)
    entropy_const = m * (LOG_2PI + 1.0)
    return {
        "likelihood": -float(np.sum(psi * zeta)) / (2.0 * dt),
        "log_diffusion": -0.5 * float(np.sum(state.v + pr.B @ d)),
        "normalizer": -0.5 * N * math.log(2.0 * math.pi * dt),
        "prior_f": -0.5 * logdet(pr.Kmm) - 0.5 * m * LOG_2PI
                   - 0.5 * (float(np.sum(LkF * LkF)) + float(wf @ wf)),
        "prior_s": -0.5 * logdet(pr.Jmm) - 0.5 * m * LOG_2PI
                   - 0.5 * (float(np.sum(LjS * LjS)) + float(ws @ ws)),
        "entropy_f": 0.5 * (entropy_const + logdet(Ffac)),
        "entropy_s": 0.5 * (entropy_const + logdet(Sfac)),
    }


def lower_bound(dataset, state, zeta, psi):
    terms = lower_bound_terms(dataset, state, zeta, psi)
    total = math.fsum(terms.values())
    if not math.isfinite(total):
        raise InferenceError("lower bound is not finite", breakdown=terms)
    return total


def modified_lower_bound(L, m):
    """``L + log(m!)``, accounting for the ``m!`` relabelled modes."""
    if m < 1:
        raise InferenceError("m must be >= 1")
    return L + math.fsum(math.log(k) for k in range(2, m + 1))


def _backprop_projection(A_bar, P_bar, A, factor):
    """Pull gradients with respect to ``A`` and ``diag P`` back to the cross
    covariance ``K_Nm`` and to ``K_mm``."""
    A_bar_Kinv = solve_psd(factor, A_bar.T).T
    cross_bar = A_bar_Kinv - 2.0 * P_bar[:, None] * A
    mm_bar = -A.T @ A_bar_Kinv + (A.T * P_bar) @ A
    return cross_bar, mm_bar


def _prior_bar(factor, second_moment):
    m = factor.n
    Kinv = solve_psd(factor, np.eye(m))
    return -0.5 * Kinv + 0.5 * Kinv @ second_moment @ Kinv


def _contract(spec, xs, xm, cross_bar, mm_bar):
    dN_theta, dN_first = cov_gradients(spec, xs, xm)
    dm_theta, dm_first = cov_gradients(spec, xm, xm)
    g_theta = (np.einsum("pij,ij->p", dN_theta, cross_bar)
               + np.einsum("pij,ij->p", dm_theta, mm_bar))
    g_xm = -np.einsum("ij,ij->j", cross_bar, dN_first)
    g_xm += np.einsum("jl,jl->j", mm_bar + mm_bar.T, dm_first)
    return g_theta, g_xm


def lower_bound_gradient(dataset, state, zeta=None, psi=None):
    """Gradient of the lower bound with respect to the hyperparameters.

    The variational parameters are held fixed.  Projections must be current.

    Returns
    -------
    dict with keys ``theta_f``, ``theta_s``, ``v`` and ``x_m``.
    """
    pr = _proj(state)
    dt = dataset.dt
    dx = dataset.increments
    if zeta is None:
        zeta = compute_zeta(state)
    if psi is None:
        psi = compute_psi(dataset, state)

    # drift side: L depends on (A, P) through psi
    psi_bar = -zeta / (2.0 * dt)
    resid = dx - dt * (pr.A @ state.mu_f)
    A_bar = psi_bar[:, None] * (-2.0 * dt * np.outer(resid, state.mu_f)
                                + 2.0 * dt * dt * (pr.A @ state.F))
    P_bar = psi_bar * dt * dt
    Kn_bar, Kmm_bar = _backprop_projection(A_bar, P_bar, pr.A, pr.Kmm)
    Kmm_bar = Kmm_bar + _prior_bar(pr.Kmm, state.F + np.outer(state.mu_f, state.mu_f))

    # diffusion side: L depends on (B, Q, v) through zeta and the log term
    d = state.mu_s - state.v
    zeta_bar = -psi / (2.0 * dt)
    zz = zeta_bar * zeta
    B_bar = zz[:, None] * (pr.B @ state.S - d[None, :]) - 0.5 * d[None, :]
    Q_bar = 0.5 * zz
    Bsum = pr.B.sum(axis=1)
    g_v = (float(np.sum(zz * (Bsum - 1.0))) - 0.5 * float(np.sum(1.0 - Bsum))
           + float(np.sum(solve_psd(pr.Jmm, d))))
    Jn_bar, Jmm_bar = _backprop_projection(B_bar, Q_bar, pr.B, pr.Jmm)
    Jmm_bar = Jmm_bar + _prior_bar(pr.Jmm, state.S + np.outer(d, d))

    xs = dataset.inputs
    g_tf, g_xm_f = _contract(state.kernel_f, xs, state.x_m, Kn_bar, Kmm_bar)
    g_ts, g_xm_s = _contract(state.kernel_s, xs, state.x_m, Jn_bar, Jmm_bar)
    return {"theta_f": g_tf, "theta_s": g_ts, "v": g_v, "x_m": g_xm_f + g_xm_s}
