"""Finite-entanglement scaling fits at criticality."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    stderr_slope: float
    npoints: int
    residuals: np.ndarray


def linear_fit(x, y) -> ScalingFit:
    """Ordinary least squares ``y = slope * x + intercept`` with the slope's standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size < 3:
        raise ValueError("need at least three points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 * max(1.0, float(x @ x)):
        raise ValueError("x values are all equal")
    slope = float(xc @ (y - y.mean()) / sxx)
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (slope * x + intercept)
    dof = x.size - 2
    stderr = float(np.sqrt((residuals @ residuals) / dof / sxx))
    return ScalingFit(slope, intercept, stderr, int(x.size), residuals)


def kappa_tilde_estimate(overlaps, mus) -> ScalingFit:
    """Slope of ``log mu`` against ``log n``."""
    overlaps = np.asarray(overlaps, dtype=float)
    if np.unique(overlaps).size < 2:
        raise ValueError("need at least two distinct overlaps")
    return linear_fit(np.log(overlaps), np.log(np.asarray(mus, dtype=float)))


def local_slopes(entropies, mus, overlaps) -> tuple[np.ndarray, np.ndarray]:
    """Two-point slopes of ``S`` against ``log mu``, tagged with ``2 / (n_i + n_{i+1})``."""
    S = np.asarray(entropies, dtype=float)
    logmu = np.log(np.asarray(mus, dtype=float))
    n = np.asarray(overlaps, dtype=float)
    order = np.argsort(n)
    S, logmu, n = S[order], logmu[order], n[order]
    slopes = np.diff(S) / np.diff(logmu)
    inv_n = 2.0 / (n[1:] + n[:-1])
    return inv_n, slopes


def central_charge_estimate(entropies, mus, overlaps, extrapolate: bool = True) -> float:
    """``c`` from ``S = (c/6) log mu + const``.

    With ``extrapolate`` the local slopes are fitted linearly in ``1/n`` and
    the ``n -> infinity`` intercept is used; otherwise the global slope.
    """
    if extrapolate:
        if len(entropies) < 4:
            raise ValueError("extrapolation needs at least four points")
        inv_n, slopes = local_slopes(entropies, mus, overlaps)
        return 6.0 * linear_fit(inv_n, slopes).intercept
    return 6.0 * linear_fit(np.log(np.asarray(mus, dtype=float)), entropies).slope


def kappa_from_c(c: float) -> float:
    """Finite-entanglement exponent of uMPS as a function of the central charge."""
    if c <= 0:
        raise ValueError("central charge must be positive")
    return 6.0 / (c * (np.sqrt(12.0 / c) + 1.0))


def read_scaling_table(path: str | Path) -> dict[str, np.ndarray]:
    """Columns of a CSV with header ``n_or_D, energy, entropy, corr_length`` (``#`` lines skipped)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def fit_report(overlaps, entropies, mus) -> dict[str, float]:
    """The ``kappa~`` fit and both central-charge estimates."""
    kt = kappa_tilde_estimate(overlaps, mus)
    out = {
        "kappa_tilde": kt.slope,
        "kappa_tilde_stderr": kt.stderr_slope,
        "c_global": central_charge_estimate(entropies, mus, overlaps, extrapolate=False),
    }
    if len(overlaps) >= 4:
        out["c_extrapolated"] = central_charge_estimate(entropies, mus, overlaps, extrapolate=True)
    return out
