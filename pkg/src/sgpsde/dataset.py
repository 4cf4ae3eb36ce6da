from dataclasses import dataclass, field
import hashlib

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Dataset:
    """A uniformly sampled scalar series ``x`` with sampling period ``dt``.

    ``increments[i] = x[i + 1] - x[i]`` pairs with the left end point
    ``x[i]``; :attr:`inputs` are those ``N`` left end points.
    """

    x: np.ndarray
    dt: float
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        if x.size < 3:
            raise ConfigurationError(f"need at least 3 samples (N >= 2), got {x.size}")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("series contains non-finite values")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"sampling period must be positive, got {self.dt}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self):
        """Number of increments ``N``."""
        return self.x.size - 1

    @property
    def inputs(self):
        return self.x[:-1]

    @property
    def increments(self):
        return np.diff(self.x)

    @property
    def data_range(self):
        return float(self.x.max() - self.x.min())

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(float(self.dt).hex().encode())
        return h.hexdigest()[:16]
