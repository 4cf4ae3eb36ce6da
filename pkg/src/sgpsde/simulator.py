"""Euler-Maruyama simulation of scalar SDEs ``dx = f(x) dt + sqrt(g(x)) dW``."""
from dataclasses import dataclass
import math
from typing import Callable, Optional

import numpy as np

from .dataset import Dataset
from .errors import ConfigurationError, SimulationError, UsageError

BOUNDARY_DELTA = 1e-6


@dataclass(frozen=True)
class ModelSpec:
    """Drift ``f`` and diffusion ``g`` (the variance rate, not its root).

    ``domain`` optionally confines the state; Euler steps leaving it are
    clipped back inside.  ``x0`` is the default initial state.
    """

    name: str
    drift: Callable
    diffusion_g: Callable
    domain: Optional[tuple] = None
    x0: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    n_samples: int
    dt: float
    x0: Optional[float] = None
    seed: int = 0
    burn_in: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigurationError("n_samples must be >= 2")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")


def em_step(model, x, dt, dW):
    """One Euler-Maruyama step, clipped into the model domain."""
    fx = model.drift(x)
    gx = model.diffusion_g(x)
    if not (math.isfinite(fx) and math.isfinite(gx)):
        raise SimulationError(f"non-finite coefficients at x = {x}")
    x_next = x + fx * dt + math.sqrt(max(gx, 0.0)) * dW
    if model.domain is not None:
        lo, hi = model.domain
        x_next = min(max(x_next, lo), hi)
    return x_next


def simulate_path(model, n_steps, dt, x0, rng):
    """Return the path (``n_steps + 1`` states) and the number of clipped steps."""
    f, g = model.drift, model.diffusion_g
    lo, hi = model.domain if model.domain is not None else (-math.inf, math.inf)
    noise = rng.standard_normal(n_steps) * math.sqrt(dt)
    out = np.empty(n_steps + 1)
    x = float(x0)
    out[0] = x
    clips = 0
    sqrt = math.sqrt
    for i in range(n_steps):
        fx = f(x)
        gx = g(x)
        if not (math.isfinite(fx) and math.isfinite(gx)):
            raise SimulationError(f"non-finite coefficients at step {i} (x = {x})", step=i)
        x = x + fx * dt + sqrt(gx if gx > 0.0 else 0.0) * noise[i]
        if x < lo:
            x, clips = lo, clips + 1
        elif x > hi:
            x, clips = hi, clips + 1
        out[i + 1] = x
    return out, clips


def simulate(model, cfg, rng=None):
    """Simulate ``cfg.n_samples`` states after discarding ``cfg.burn_in`` steps."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    x0 = model.x0 if cfg.x0 is None else cfg.x0
    path, clips = simulate_path(model, cfg.n_samples - 1 + cfg.burn_in, cfg.dt, x0, rng)
    return Dataset(path[cfg.burn_in:], cfg.dt, info={"model": model.name, "clips": clips})


def path_rng(seed, *key):
    """Independent generator for the stream identified by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _m1():
    return ModelSpec("M1", lambda x: -(x - 3.0), lambda x: 2.0, None, 3.0)


def _m2():
    return ModelSpec("M2", lambda x: -(x ** 3 - x), lambda x: 1.0, None, 1.0)


def _m3():
    return ModelSpec("M3", lambda x: -x ** 3, lambda x: (0.2 + x * x) ** 2, None, 0.0)


def _m4():
    return ModelSpec("M4", lambda x: -0.7 * (x - 0.5), lambda x: 0.7 * x * (1.0 - x),
                     (BOUNDARY_DELTA, 1.0 - BOUNDARY_DELTA), 0.5)


def _m5():
    return ModelSpec("M5", lambda x: -(x - 0.225), lambda x: 0.25 * x,
                     (BOUNDARY_DELTA, math.inf), 0.225)


def _m6():
    return ModelSpec("M6", lambda x: -x + math.sin(3.5 * x) * math.exp(-x * x),
                     lambda x: 0.431 ** 2, None, 0.0)


BUILTIN = {"M1": _m1, "M2": _m2, "M3": _m3, "M4": _m4, "M5": _m5, "M6": _m6}


def builtin_model(model_id):
    """The benchmark models M1..M6."""
    try:
        return BUILTIN[str(model_id).upper()]()
    except KeyError:
        raise UsageError(f"unknown model {model_id!r}; expected one of {sorted(BUILTIN)}") from None


def vectorized(fn):
    """Apply a scalar coefficient function elementwise to an array."""
    def wrapped(xs):
        xs = np.asarray(xs, dtype=float)
        return np.array([fn(float(v)) for v in xs.ravel()]).reshape(xs.shape)
    return wrapped
