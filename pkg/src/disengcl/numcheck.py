"""Finite-difference gradient oracle for checking the tape."""

from __future__ import annotations

from typing import Callable

import numpy as np


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``f`` must be deterministic; ``x`` is never mutated.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        bumped = x.copy().ravel()
        bumped[i] += h
        hi = f(bumped.reshape(x.shape))
        bumped[i] -= 2.0 * h
        lo = f(bumped.reshape(x.shape))
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def max_relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Largest absolute deviation, normalized by the largest reference entry.

    Robust for gradient checks: near-zero entries do not blow the ratio up,
    and an all-zero pair compares equal.
    """
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(float(np.max(np.abs(want))), 1e-12)
    return float(np.max(np.abs(got - want))) / scale
