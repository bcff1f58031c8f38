"""Flat parameter-vector arithmetic.

A parameter vector is a 1-D ``float64`` numpy array. Every function here is
pure: inputs are never written to, results are fresh arrays, and the result is
checked for NaN/Inf before it is returned.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyAggregateError, NonFiniteError

ParamVector = np.ndarray


def as_param(values) -> ParamVector:
    x = np.array(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DimensionError("parameter vector must have dim >= 1")
    return _finite(x)


def _finite(x: ParamVector) -> ParamVector:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite entry in parameter vector")
    return x


def _check_same(x: ParamVector, y: ParamVector) -> None:
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape} vs {y.shape}")


def zeros(dim: int) -> ParamVector:
    if int(dim) < 1:
        raise DimensionError(f"dim must be >= 1, got {dim}")
    return np.zeros(int(dim), dtype=np.float64)


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``y + a * x``."""
    _check_same(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = y + a * x
    return _finite(out)


def sub(x: ParamVector, y: ParamVector) -> ParamVector:
    _check_same(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - y
    return _finite(out)


def scale(a: float, x: ParamVector) -> ParamVector:
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x
    return _finite(out)


def dot(x: ParamVector, y: ParamVector) -> float:
    # cumsum accumulates strictly left to right (np.sum is pairwise, BLAS may thread)
    _check_same(x, y)
    return float(np.cumsum(x * y)[-1])


def norm_sq(x: ParamVector) -> float:
    return float(np.cumsum(x * x)[-1])


def mean(vectors: Sequence[ParamVector]) -> ParamVector:
    """Unweighted average, accumulated left to right in list order."""
    if len(vectors) == 0:
        raise EmptyAggregateError("mean of an empty list")
    acc = np.array(vectors[0], dtype=np.float64, copy=True)
    for v in vectors[1:]:
        _check_same(acc, v)
        acc += v
    acc /= len(vectors)
    return _finite(acc)


def check_finite(x: ParamVector) -> ParamVector:
    return _finite(x)
