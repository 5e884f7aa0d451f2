"""Small input-validation helpers shared across modules."""

import numbers

import numpy as np


def check_positive(value, name):
    if not (isinstance(value, numbers.Real) and np.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a finite number > 0, got {value!r}")
    return float(value)


def check_nonnegative(value, name):
    if not (isinstance(value, numbers.Real) and np.isfinite(value) and value >= 0):
        raise ValueError(f"{name} must be a finite number >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_1d(x, name, min_length=1):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_length:
        raise ValueError(f"{name} needs at least {min_length} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_sampling(*series):
    """All TimeSeries share dt (to 1e-12 relative) and length."""
    dts = [s.dt for s in series]
    if not np.allclose(dts, dts[0], rtol=1e-12, atol=0):
        raise ValueError(f"series have different sample intervals: {dts}")
    lengths = [len(s) for s in series]
    if len(set(lengths)) != 1:
        raise ValueError(f"series have mismatched lengths: {lengths}")
