"""Series ingestion, preprocessing, model persistence and fit configuration."""
import csv
import io
import json
import math
from dataclasses import fields

import numpy as np

from .dataset import Dataset
from .errors import (ConfigurationError, IngestionError, ModelFileError,
                     PreprocessingError, VersionError)
from .fit import FitConfig
from .inference import SgpState
from .kernels import KernelSpec

FORMAT_VERSION = 1
SPACING_RTOL = 1e-6


# -- series -------------------------------------------------------------------

def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = [h.strip().lower() for h in rows[0]]
    return header, rows[1:]


def _column(header, rows, name, path):
    j = header.index(name)
    out = np.empty(len(rows))
    for i, r in enumerate(rows):
        cell = r[j].strip() if j < len(r) else ""
        try:
            val = float(cell)
        except ValueError:
            raise IngestionError(f"{path}: missing or invalid value in column {name!r} "
                                 f"at index {i}", index=i) from None
        if not math.isfinite(val):
            raise IngestionError(f"{path}: missing value in column {name!r} at index {i}", index=i)
        out[i] = val
    return out


def check_uniform(t):
    """Sampling period of strictly increasing, uniformly spaced times."""
    t = np.asarray(t, dtype=float)
    d = np.diff(t)
    if d.size == 0:
        raise IngestionError("need at least two time stamps")
    ref = d[0]
    for i, di in enumerate(d):
        if not di > 0:
            raise IngestionError(f"time is not strictly increasing at index {i + 1}", index=i + 1)
        if abs(di - ref) > SPACING_RTOL * abs(ref):
            raise IngestionError(f"non-uniform time spacing at index {i + 1}", index=i + 1)
    return float((t[-1] - t[0]) / d.size)


def load_series(path, dt_override=None):
    """Read a CSV with columns ``(t, x)`` or a single column ``x``."""
    header, rows = _read_table(path)
    if "x" in header:
        x = _column(header, rows, "x", path)
    elif len(header) == 1:
        x = _column(header, rows, header[0], path)
    else:
        raise IngestionError(f"{path}: expected a column named 'x'")
    if "t" in header:
        dt = check_uniform(_column(header, rows, "t", path))
        if dt_override is not None and abs(dt - dt_override) > SPACING_RTOL * dt:
            raise IngestionError(f"{path}: --dt {dt_override} disagrees with time column (dt = {dt})")
    elif dt_override is not None:
        dt = float(dt_override)
    else:
        raise IngestionError(f"{path}: no time column; the sampling period must be given")
    try:
        return Dataset(x, dt)
    except ConfigurationError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def load_states(path):
    """Only the ``x`` column of a series file; no sampling period needed."""
    header, rows = _read_table(path)
    if "x" in header:
        return _column(header, rows, "x", path)
    if len(header) == 1:
        return _column(header, rows, header[0], path)
    raise IngestionError(f"{path}: expected a column named 'x'")


def write_series(path, dataset, with_time=True):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if with_time:
            w.writerow(["t", "x"])
            for i, xi in enumerate(dataset.x):
                w.writerow([repr(i * dataset.dt), repr(float(xi))])
        else:
            w.writerow(["x"])
            for xi in dataset.x:
                w.writerow([repr(float(xi))])


def log_returns(prices):
    """``log(p[n + 1] / p[n])``; one element shorter than the input."""
    p = np.asarray(prices, dtype=float)
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise PreprocessingError(f"non-positive price at index {bad[0]}", index=int(bad[0]))
    return np.log(p[1:] / p[:-1])


def load_prices(path):
    header, rows = _read_table(path)
    for name in ("price", "p", "x"):
        if name in header:
            return _column(header, rows, name, path)
    if len(header) == 1:
        return _column(header, rows, header[0], path)
    raise IngestionError(f"{path}: expected a column named 'price'")


# -- curves -------------------------------------------------------------------

def curves_to_csv(columns):
    """``columns`` maps header names to equal-length arrays (column order kept)."""
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in zip(*data):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def load_curves(path):
    header, rows = _read_table(path)
    return {name: np.array([float(r[j]) for r in rows]) for j, name in enumerate(header)}


# -- model files --------------------------------------------------------------

def _hex(v):
    return float(v).hex()


def _hex_array(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return [_hex(v) for v in a]
    return [[_hex(v) for v in row] for row in a]


def _unhex(v, where):
    try:
        return float.fromhex(v) if isinstance(v, str) else float(v)
    except (TypeError, ValueError):
        raise ModelFileError(f"invalid number at {where}: {v!r}") from None


def _unhex_array(a, where):
    if not isinstance(a, list):
        raise ModelFileError(f"expected a list at {where}")
    if a and isinstance(a[0], list):
        return np.array([[_unhex(v, where) for v in row] for row in a])
    return np.array([_unhex(v, where) for v in a])


def _kernel_doc(spec):
    return {"family": spec.family, "theta": [_hex(t) for t in spec.theta],
            "amplitude": _hex(spec.amplitude), "jitter": _hex(spec.jitter)}


def _kernel_from(doc, where):
    try:
        return KernelSpec(doc["family"], [_unhex(t, where) for t in doc["theta"]],
                          _unhex(doc["amplitude"], where), _unhex(doc["jitter"], where))
    except KeyError as exc:
        raise ModelFileError(f"missing key {exc} in {where}") from None
    except ConfigurationError as exc:
        raise ModelFileError(f"invalid kernel in {where}: {exc}") from None


def model_document(state, fit_result=None, dataset=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "kernel_f": _kernel_doc(state.kernel_f),
        "kernel_s": _kernel_doc(state.kernel_s),
        "v": _hex(state.v),
        "x_m": _hex_array(state.x_m),
        "mu_f": _hex_array(state.mu_f),
        "F": _hex_array(state.F),
        "mu_s": _hex_array(state.mu_s),
        "S": _hex_array(state.S),
    }
    if dataset is not None:
        doc["dataset"] = {"fingerprint": dataset.fingerprint(), "n": dataset.n,
                          "dt": _hex(dataset.dt), "x_min": _hex(dataset.x.min()),
                          "x_max": _hex(dataset.x.max())}
    if fit_result is not None:
        doc["fit"] = {
            "L": _hex(fit_result.L), "L_prime": _hex(fit_result.L_prime),
            "converged": bool(fit_result.converged), "iterations": int(fit_result.iterations),
            "best_restart": int(fit_result.best_restart),
            "diagnostics": {k: int(v) for k, v in fit_result.diagnostics.items()},
            "elbo_trace": [_hex(v) for v in fit_result.elbo_trace],
        }
    return doc


def save_model(state, path, fit_result=None, dataset=None):
    text = json.dumps(model_document(state, fit_result, dataset), indent=1, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def read_model_file(path):
    """Parse a model file; returns ``(state, document)``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
                             f"{exc.msg}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFileError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: format_version {doc['format_version']} is not supported "
                           f"(expected {FORMAT_VERSION})")
    try:
        state = SgpState(
            x_m=_unhex_array(doc["x_m"], "x_m"),
            kernel_f=_kernel_from(doc["kernel_f"], "kernel_f"),
            kernel_s=_kernel_from(doc["kernel_s"], "kernel_s"),
            v=_unhex(doc["v"], "v"),
            mu_f=_unhex_array(doc["mu_f"], "mu_f"), F=_unhex_array(doc["F"], "F"),
            mu_s=_unhex_array(doc["mu_s"], "mu_s"), S=_unhex_array(doc["S"], "S"))
    except KeyError as exc:
        raise ModelFileError(f"{path}: missing key {exc}") from None
    m = state.x_m.size
    for name, shape in (("mu_f", (m,)), ("mu_s", (m,)), ("F", (m, m)), ("S", (m, m))):
        if getattr(state, name).shape != shape:
            raise ModelFileError(f"{path}: {name} has shape {getattr(state, name).shape}, "
                                 f"expected {shape}")
    return state, doc


def load_model(path):
    return read_model_file(path)[0]


# -- fit configuration ----------------------------------------------------------

_TUPLE_KEYS = {"length_scale_bounds_f", "length_scale_bounds_s", "alpha_bounds"}
_BOOL_KEYS = {"m_step"}
_STR_KEYS = {"kernel_f", "kernel_s"}
_INT_KEYS = {"m", "restarts", "max_em_iterations", "m_step_inner_iterations", "seed", "workers"}
_OPTIONAL_KEYS = {"length_scale_bounds_f", "length_scale_bounds_s", "pseudo_input_noise"}


def _parse_value(key, raw, lineno):
    raw = raw.strip()
    try:
        if key in _OPTIONAL_KEYS and raw.lower() in ("none", "auto", ""):
            return None
        if key in _TUPLE_KEYS:
            parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return tuple(float(p) for p in parts)
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError("expected a boolean")
            return low in ("true", "yes", "1")
        if key in _STR_KEYS:
            return raw
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"line {lineno}: invalid value for {key!r}: {exc}") from None


def parse_config(text):
    """``key = value`` lines for :class:`FitConfig`; unknown keys are errors."""
    known = {f.name for f in fields(FitConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, lineno)
    return FitConfig(**values)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
