"""Shared numeric utilities: trimmed mean, scalar least squares, masked finite differences.

Both estimators and the test suite use these, so they are isolated and tested
on their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSystemError, InsufficientDataError


@dataclass(frozen=True)
class TrimSpec:
    """Per-tail trim fraction for the trimmed mean."""

    trim: float = 0.15

    def __post_init__(self) -> None:
        if not 0.0 <= self.trim < 0.5:
            raise ValueError(f"trim fraction must be in [0, 0.5), got {self.trim}")


def trimmed_mean(values, spec: TrimSpec | float = TrimSpec()) -> float:
    """Mean after dropping floor(trim * n) values from each end of the sorted data.

    floor() keeps at least as much data as the nominal trim, so a single value
    survives any valid trim fraction.
    """
    trim = spec.trim if isinstance(spec, TrimSpec) else TrimSpec(float(spec)).trim
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise InsufficientDataError("trimmed_mean of empty input", valid_count=0)
    k = math.floor(trim * x.size)
    if x.size - 2 * k < 1:
        raise InsufficientDataError(
            f"trim {trim} leaves no data out of {x.size} values", valid_count=int(x.size)
        )
    # np.sort is stable for equal keys so ties cannot reorder the kept window.
    x = np.sort(x, kind="stable")
    return float(np.mean(x[k : x.size - k]))


def scalar_lsq(a, b) -> float:
    """Least-squares solution x of the overdetermined scalar system a_i * x = b_i.

    Returns sum(a*b) / sum(a*a), the minimizer of sum((a*x - b)^2).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"coefficient/rhs length mismatch: {a.size} vs {b.size}")
    denom = float(np.dot(a, a))
    if denom == 0.0:
        raise DegenerateSystemError("all coefficients are zero")
    return float(np.dot(a, b)) / denom


def masked_central_diff(values, valid, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference derivative of unevenly observed samples on a uniform grid.

    Central difference where both immediate neighbours are valid, one-sided
    where exactly one is, undefined (False in the returned mask) where the
    sample itself is invalid or has no valid neighbour.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    f = np.asarray(values, dtype=np.float64).ravel()
    ok = np.asarray(valid, dtype=bool).ravel()
    if f.shape != ok.shape:
        raise ValueError("values and validity mask must have the same length")

    n = f.size
    deriv = np.full(n, np.nan)
    out_ok = np.zeros(n, dtype=bool)
    if n == 0:
        return deriv, out_ok

    prev_ok = np.zeros(n, dtype=bool)
    next_ok = np.zeros(n, dtype=bool)
    prev_ok[1:] = ok[:-1]
    next_ok[:-1] = ok[1:]

    central = ok & prev_ok & next_ok
    fwd = ok & next_ok & ~prev_ok
    bwd = ok & prev_ok & ~next_ok

    idx = np.nonzero(central)[0]
    deriv[idx] = (f[idx + 1] - f[idx - 1]) / (2.0 * spacing)
    idx = np.nonzero(fwd)[0]
    deriv[idx] = (f[idx + 1] - f[idx]) / spacing
    idx = np.nonzero(bwd)[0]
    deriv[idx] = (f[idx] - f[idx - 1]) / spacing

    out_ok = central | fwd | bwd
    return deriv, out_ok
