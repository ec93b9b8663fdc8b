"""Input validation helpers shared by the public functions and estimators."""
import math

import numpy as np

from .exceptions import ConfigError

DEGENERACY_TOL = 1e-9  # MHz


def check_finite(name, value):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return value


def check_positive(name, value, strict=True):
    check_finite(name, value)
    arr = np.asarray(value)
    bad = arr <= 0 if strict else arr < 0
    if np.any(bad):
        rel = ">" if strict else ">="
        raise ConfigError(f"{name} must be {rel} 0, got {value!r}")
    return value


def as_float_vector(name, values, allow_empty=True):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ConfigError(f"{name} must not be empty")
    check_finite(name, arr)
    return arr


def check_same_length(**vectors):
    lengths = {k: len(v) for k, v in vectors.items()}
    if len(set(lengths.values())) > 1:
        raise ConfigError(f"length mismatch: {lengths}")


def is_degenerate(values, tol=DEGENERACY_TOL):
    values = np.asarray(values, dtype=float)
    return values.size == 0 or float(np.ptp(values)) <= tol


def check_int(name, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
