"""Physical observables shared by the uCPS and uMPS engines.

All logarithms are natural. Correlation lengths are in units of the
fundamental lattice spacing.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import NamedTuple

import numpy as np

from .models import BlockHamiltonian, embed
from .state import SpectralEnvironment, UcpsState, block_energy, expectation_one_block, mixed_transfer

IMAG_TOL = 1e-10
RATE_CAP = 50.0


class HermiticityError(ValueError):
    """An expectation value that should be real has a sizeable imaginary part."""


class DegenerateDominantError(ArithmeticError):
    """The second transfer eigenvalue has unit magnitude."""


class UndefinedCorrelationLength(ValueError):
    """There is no second transfer eigenvalue (bond dimension one)."""


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    energy: float
    entropy: float
    corr_length: float
    order_param: float
    rate_function: float

    @staticmethod
    def header() -> list[str]:
        return [f.name for f in fields(ObservableRecord)]

    def row(self) -> list[float]:
        return list(astuple(self))


def _real(z: complex, what: str) -> float:
    if abs(z.imag) > IMAG_TOL * max(1.0, abs(z.real)):
        raise HermiticityError(f"{what} has imaginary part {z.imag:.3e}")
    return float(z.real)


def energy_density(state: UcpsState, env: SpectralEnvironment, H: BlockHamiltonian) -> float:
    """Energy per fundamental site."""
    return _real(block_energy(state, env, H), "energy") / H.n


def entanglement_entropy(schmidt: np.ndarray, tol: float = 1e-8) -> float:
    """``-sum p log p`` with ``p = schmidt**2``; zero weights are skipped."""
    p = np.asarray(schmidt, dtype=float) ** 2
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"Schmidt coefficients are not normalised (sum of squares {p.sum():.12g})")
    p = p[p > 0]
    return float(max(-np.sum(p * np.log(p)), 0.0))


def second_eigenvalue_magnitude(eigenvalues: np.ndarray) -> float:
    lam = np.asarray(eigenvalues)
    if lam.size < 2:
        raise UndefinedCorrelationLength("transfer matrix has a single eigenvalue")
    return float(np.sort(np.abs(lam))[-2])


def correlation_length(env, n: int = 1, engine: str = "ucps") -> float:
    """``-n / log|lambda_2|`` (uCPS, blocks of ``n`` sites) or ``-1 / log|lambda_2|`` (uMPS).

    ``env`` is anything with an ``eigenvalues`` array (the uMPS environment
    carries the leading pair of its transfer map).
    """
    if engine not in ("ucps", "umps"):
        raise ValueError(f"unknown engine {engine!r}")
    lam2 = second_eigenvalue_magnitude(env.eigenvalues)
    if lam2 >= 1.0 - 1e-12:
        raise DegenerateDominantError(f"|lambda_2| = {lam2:.15g} is not below one")
    if lam2 == 0.0:
        return 0.0
    units = n if engine == "ucps" else 1
    return float(-units / np.log(lam2))


def site_operator(pauli: np.ndarray, position: int, n: int) -> np.ndarray:
    """``pauli`` on ``position`` (1-based) of an ``n``-spin block."""
    if not 1 <= position <= n:
        raise ValueError(f"position {position} outside block of {n} spins")
    return embed({position - 1: pauli}, n)


def order_parameter_profile(state: UcpsState, env: SpectralEnvironment, pauli: np.ndarray) -> np.ndarray:
    """``<pauli>`` at every position inside the block."""
    return np.array(
        [_real(expectation_one_block(state, env, site_operator(pauli, k, state.n)), "order parameter")
         for k in range(1, state.n + 1)]
    )


def order_parameter(
    state: UcpsState, env: SpectralEnvironment, pauli: np.ndarray, position: int | None = None
) -> float:
    """``<pauli>`` at ``position`` (1-based), or averaged over the block if ``position`` is None."""
    if position is None:
        return float(order_parameter_profile(state, env, pauli).mean())
    op = site_operator(pauli, position, state.n)
    return _real(expectation_one_block(state, env, op), "order parameter")


class Rate(NamedTuple):
    value: float
    saturated: bool


def rate_function(psi0: UcpsState, psit: UcpsState) -> Rate:
    """Loschmidt rate ``-(2/n) log|lambda_max|`` of the mixed transfer matrix, per site.

    Capped at ``RATE_CAP`` (with ``saturated`` set) when the overlap per
    block underflows.
    """
    M = mixed_transfer(psit, psi0)
    lam = float(np.max(np.abs(np.linalg.eigvals(M)))) if np.any(M) else 0.0
    n = psi0.n
    if lam <= np.exp(-RATE_CAP * n / 2):
        return Rate(RATE_CAP, True)
    return Rate(float(-2.0 / n * np.log(lam)), False)


# ---------------------------------------------------------------- time-series analysis


def slope_jumps(times, values) -> tuple[np.ndarray, np.ndarray]:
    """Change of the finite-difference slope at every interior sample of a uniform series."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 3:
        raise ValueError("need at least three samples of equal-length series")
    step = np.diff(t)
    if np.ptp(step) > 1e-9 * max(1.0, abs(step[0])):
        raise ValueError("samples must be uniformly spaced")
    slopes = np.diff(v) / step
    return t[1:-1], np.diff(slopes)


def detect_kinks(times, values, ratio: float = 10.0) -> np.ndarray:
    """Times where the slope jumps by more than ``ratio`` times the typical jump.

    On a smooth curve the slope change per sample is ``~ f'' dt`` and shrinks
    with the spacing; at a kink it stays finite. A sample is reported when
    its jump is a local maximum exceeding ``ratio`` times the median jump.
    """
    t, jumps = slope_jumps(times, values)
    mag = np.abs(jumps)
    floor = ratio * max(float(np.median(mag)), np.finfo(float).tiny)
    out = []
    for i in range(mag.size):
        left = mag[i - 1] if i > 0 else -np.inf
        right = mag[i + 1] if i + 1 < mag.size else -np.inf
        if mag[i] > floor and mag[i] >= left and mag[i] > right:
            out.append(t[i])
    return np.array(out)


def detect_period(times, values, t_min: float = 0.0) -> float:
    """First return time: the lowest local minimum after ``t_min``, refined on a spline.

    Intended for nonnegative series such as the Loschmidt rate, which returns
    to zero at an exact recurrence.
    """
    from scipy.interpolate import CubicSpline
    from scipy.optimize import minimize_scalar

    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    inner = np.flatnonzero((t[1:-1] > t_min) & (v[1:-1] <= v[:-2]) & (v[1:-1] <= v[2:])) + 1
    if inner.size == 0:
        raise ValueError("series has no interior minimum")
    i = inner[np.argmin(v[inner])] if inner.size > 1 else inner[0]
    # the first minimum that comes close to the global one
    close = inner[v[inner] <= v[i] + 1e-3 * max(np.ptp(v), 1e-300)]
    i = close[0]
    spline = CubicSpline(t, v)
    res = minimize_scalar(spline, bounds=(t[i - 1], t[i + 1]), method="bounded", options={"xatol": 1e-12})
    return float(res.x)
