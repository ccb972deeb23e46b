"""Flattened parameter-vector algebra.

A parameter vector is a 1-D float64 numpy array marked read-only, used as
the value type for model states, local updates, and aggregated updates.
All operations are pure: inputs are never mutated and results are returned
as fresh read-only arrays.
"""

from __future__ import annotations

import numpy as np

ParamVec = np.ndarray

# Below this norm a reference direction is treated as degenerate: the
# projection divides by it and client-to-client differences drown in noise.
ZERO_NORM_THRESHOLD = 1e-12


class DegenerateGlobalUpdate(Exception):
    """Raised when a projection reference direction has (near-)zero norm."""


def paramvec(values) -> ParamVec:
    """Build a validated parameter vector from any 1-D sequence of reals."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("parameter vector must be non-empty")
    _check_finite(arr)
    if arr is values and arr.flags.writeable:
        arr = arr.copy()  # freezing must not reach back into the caller's buffer
    return _freeze(arr)


def zeros(length: int) -> ParamVec:
    if length <= 0:
        raise ValueError(f"length must be positive, got {length}")
    return _freeze(np.zeros(length, dtype=np.float64))


def add(a: ParamVec, b: ParamVec) -> ParamVec:
    """Element-wise sum of two equal-length vectors."""
    _check_lengths(a, b)
    out = a + b
    _check_finite(out)
    return _freeze(out)


def scale(a: ParamVec, c: float) -> ParamVec:
    """Element-wise product by a finite scalar."""
    if not np.isfinite(c):
        raise ValueError(f"scale factor must be finite, got {c}")
    out = a * float(c)
    _check_finite(out)
    return _freeze(out)


def dot(a: ParamVec, b: ParamVec) -> float:
    """Inner product, accumulated in double precision."""
    _check_lengths(a, b)
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def norm(a: ParamVec) -> float:
    """Euclidean norm, sqrt(dot(a, a))."""
    return float(np.sqrt(np.dot(a, a)))


def projection_norm(local_delta: ParamVec, global_delta: ParamVec) -> float:
    """Signed length of ``local_delta`` along the ``global_delta`` direction.

    Computed as dot(local_delta, global_delta) / norm(global_delta).  The
    result is negative when the local update opposes the global direction.

    Raises:
        DegenerateGlobalUpdate: if norm(global_delta) is at or below
            ``ZERO_NORM_THRESHOLD``; callers fall back to uniform weights.
    """
    _check_lengths(local_delta, global_delta)
    denom = norm(global_delta)
    if denom <= ZERO_NORM_THRESHOLD:
        raise DegenerateGlobalUpdate(
            f"reference update norm {denom!r} is at or below {ZERO_NORM_THRESHOLD}"
        )
    return dot(local_delta, global_delta) / denom


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")


def _check_finite(arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains non-finite values")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr
