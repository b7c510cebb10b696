"""Input validation helpers shared by the library and the estimator API."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import InvalidInputError


def as_float_vector(values, name, *, allow_empty=False):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise InvalidInputError(f"{name} has a non-finite entry at index {bad}")
    return arr


def as_event_vector(values, name="delta"):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    try:
        as_float = arr.astype(float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} must be numeric") from exc
    bad = ~np.isin(as_float, (0.0, 1.0))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise InvalidInputError(f"{name}[{idx}] = {arr[idx]!r} is not 0 or 1")
    return as_float.astype(np.int8)


def as_design_matrix(values, n_rows=None, name="x"):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise InvalidInputError(f"{name} needs at least one column")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise InvalidInputError(
            f"{name} has {arr.shape[0]} rows but {n_rows} follow-up times were given"
        )
    if not np.all(np.isfinite(arr)):
        row, col = np.argwhere(~np.isfinite(arr))[0]
        raise InvalidInputError(f"{name}[{row}, {col}] is missing or non-finite")
    return arr


def check_theta(theta, d):
    """Return ``theta`` as a float vector of length ``d`` with ``theta[0] == 1``."""
    arr = np.asarray(theta, dtype=float).reshape(-1)
    if arr.size != d:
        raise InvalidInputError(f"theta has length {arr.size}, expected {d}")
    if arr[0] != 1.0:
        raise InvalidInputError("the first index coefficient must be pinned to 1")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("theta has non-finite entries")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_window(window):
    lo, hi = (float(v) for v in window)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise InvalidInputError(f"invalid truncation window {window!r}")
    return lo, hi


def split_censored_target(y):
    """Split an estimator target into follow-up times and event flags.

    ``y`` may be an ``(n, 2)`` array with columns ``(z, delta)`` or a structured
    array with fields ``z`` and ``delta`` (``time``/``event`` also accepted).
    """
    arr = np.asarray(y)
    if arr.dtype.names:
        names = arr.dtype.names
        for zname, dname in (("z", "delta"), ("time", "event")):
            if zname in names and dname in names:
                return arr[zname], arr[dname]
        raise InvalidInputError(f"structured target needs fields (z, delta); got {names}")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError("y must have two columns: follow-up time and event flag")
    return arr[:, 0], arr[:, 1]
