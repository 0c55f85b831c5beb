"""Correlation statistics for the layer risk report."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .constants import CI_Z, DEFAULT_PERMUTATIONS
from .errors import ConstantVector, EmptyInput, InvalidConfig, LengthMismatch

MIN_PERMUTATIONS = 1000
_TIE_TOL = 1e-12


def _centered(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"pearson needs equal lengths, got {x.size} and {y.size}")
    if x.size < 3:
        raise LengthMismatch(f"pearson needs at least 3 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    if not np.any(xc) or not np.any(yc):
        raise ConstantVector("pearson is undefined for a constant vector")
    return xc, yc


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    xc, yc = _centered(xs, ys)
    r = float(np.dot(xc, yc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    return max(-1.0, min(1.0, r))


def pearson_pvalue(
    xs: Sequence[float],
    ys: Sequence[float],
    num_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value, (c + 1) / (N + 1) with c the permutations at least as extreme."""
    if num_permutations < MIN_PERMUTATIONS:
        raise InvalidConfig(f"num_permutations must be >= {MIN_PERMUTATIONS}, got {num_permutations}")
    xc, yc = _centered(xs, ys)
    observed = abs(float(np.dot(xc, yc)) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(yc, (num_permutations, 1)), axis=1)
    r_perm = np.abs(perms @ xc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    count = int(np.sum(r_perm >= observed - _TIE_TOL))
    return (count + 1) / (num_permutations + 1)


def delta_r(r_base: float, r_other: float) -> float:
    """Change in correlation when measuring another property against the baseline."""
    return r_other - r_base


def confidence_half_width(values: Sequence[float], z: float = CI_Z) -> float:
    """Normal-approximation half-width ``z * std / sqrt(n)``; NaN for a single finite value."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise EmptyInput("no finite values for a confidence interval")
    if v.size == 1:
        return float("nan")
    return float(z * v.std(ddof=1) / math.sqrt(v.size))


def finite_mean(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else float("nan")
