from functools import wraps

import numpy as np

from .exceptions import DimensionError, UnstableSystemError

STABILITY_MARGIN = 1e-8


def _radius(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def square_required(func):
    """Reject a first argument that is not a finite square matrix."""

    @wraps(func)
    def _wrapped(matrix, *args, **kwargs):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"{func.__name__} needs a square matrix, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise DimensionError(f"{func.__name__} got non-finite entries")
        return func(matrix, *args, **kwargs)

    return _wrapped


def stable_required(func):
    """Reject a first argument whose spectral radius is not below 1 - STABILITY_MARGIN."""

    @wraps(func)
    def _wrapped(matrix, *args, **kwargs):
        radius = _radius(matrix)
        if radius >= 1.0 - STABILITY_MARGIN:
            raise UnstableSystemError(f"{func.__name__} needs a stable matrix", radius)
        return func(matrix, *args, **kwargs)

    return square_required(_wrapped)
