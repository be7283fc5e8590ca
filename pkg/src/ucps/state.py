"""Uniform correlator product states on an infinite chain.

The state is ``|psi> = sum_p prod_k C[p_k, p_{k+1}] |..., p_k, p_{k+1}, ...>`` where
each ``p_k`` labels the ``D = s**n`` configurations of the k-th block of ``n``
spins.  Because neighbouring plaquettes share a block, the norm is carried by
the elementwise transfer matrix ``E = |C|**2`` and every contraction below
works on ``D x D`` matrices only.

Internally the uMPS picture with the plaquette matrix to the *right* of the
copier (``A[p, a, b] = C[a, b] delta(p, b)``) is used throughout: its left
environment is ``diag(V_L)`` and its right environment ``C diag(V_R) C^dag``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .linalg import EigenSystem, full_eigendecomposition, psd_sqrt, safe_reciprocal, singular_values

if TYPE_CHECKING:
    from .models import BlockHamiltonian
    from .umps import UmpsState

RECIPROCAL_FLOOR = 1e-12


class NotNormalisedError(ValueError):
    """The dominant transfer eigenvalue is not one."""


class DegenerateStateError(ValueError):
    """The plaquette matrix is (numerically) zero."""


@dataclass(frozen=True, eq=False)
class UcpsState:
    C: np.ndarray
    n: int
    s: int = 2

    def __post_init__(self) -> None:
        C = np.asarray(self.C, dtype=np.complex128)
        D = self.s**self.n
        if C.shape != (D, D):
            raise ValueError(f"C must be {D}x{D} for n={self.n}, s={self.s}; got {C.shape}")
        if not np.all(np.isfinite(C)):
            raise ValueError("C has non-finite entries")
        object.__setattr__(self, "C", C)

    @property
    def D(self) -> int:
        return self.C.shape[0]

    def with_C(self, C: np.ndarray) -> UcpsState:
        return UcpsState(C, self.n, self.s)


@dataclass(frozen=True, eq=False)
class SpectralEnvironment:
    """Eigensystem of ``E`` with the dominant pair phase-fixed and normalised.

    Column ``a`` of ``right``/``left`` is ``V_R^a``/``V_L^a``; column 0 is the
    eigenvalue-one pair, real and nonnegative, with ``max(V_R) = 1`` and
    ``V_L . V_R = 1``.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    transfer: np.ndarray

    @property
    def vl(self) -> np.ndarray:
        return self.left[:, 0].real

    @property
    def vr(self) -> np.ndarray:
        return self.right[:, 0].real

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @cached_property
    def gram_weights(self) -> np.ndarray:
        """``V_L(i) V_R(j) / E_ij`` with the floored reciprocal of ``E``."""
        inv_e, _ = safe_reciprocal(self.transfer, RECIPROCAL_FLOOR)
        return np.outer(self.vl, self.vr) * inv_e.real

    @cached_property
    def inverse_gram_weights(self) -> np.ndarray:
        inv, _ = safe_reciprocal(self.gram_weights, RECIPROCAL_FLOOR)
        return inv.real


def random_state(n: int, s: int = 2, seed: int = 0, floor: float = 0.1) -> UcpsState:
    """Normalised state with complex Gaussian entries bounded away from zero."""
    if not 0.0 < floor < 0.5:
        raise ValueError("floor must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    D = s**n

    def draw(size: int) -> np.ndarray:
        return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)

    C = draw(D * D).reshape(D, D)
    for _ in range(1000):
        small = np.abs(C) < floor * np.median(np.abs(C))
        if not small.any():
            break
        C[small] = draw(int(small.sum()))
    return normalize(UcpsState(C, n, s))


def transfer_matrix(state: UcpsState) -> np.ndarray:
    return np.abs(state.C) ** 2


def dominant_transfer_eigenvalue(E: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(E))))


def normalize(state: UcpsState) -> UcpsState:
    lam = dominant_transfer_eigenvalue(transfer_matrix(state))
    if lam < 1e-300:
        raise DegenerateStateError("transfer matrix has vanishing spectral radius")
    return state.with_C(state.C / np.sqrt(lam))


def environments(state: UcpsState, tol: float = 1e-8) -> SpectralEnvironment:
    E = transfer_matrix(state)
    eig: EigenSystem = full_eigendecomposition(E)
    lam = eig.eigenvalues
    if abs(lam[0] - 1.0) > tol:
        raise NotNormalisedError(f"dominant transfer eigenvalue {lam[0]:.12g} is not one")
    right = eig.right.copy()
    left = eig.left.copy()
    r0 = right[:, 0]
    phase = r0[np.argmax(np.abs(r0))]
    scale = phase / abs(phase) * np.max(np.abs(r0))
    right[:, 0] = r0 / scale
    left[:, 0] = left[:, 0] * scale
    # Perron-Frobenius: both vectors are nonnegative up to rounding
    right[:, 0] = np.clip(right[:, 0].real, 0.0, None)
    left[:, 0] = np.clip(left[:, 0].real, 0.0, None)
    left[:, 0] /= left[:, 0] @ right[:, 0]
    return SpectralEnvironment(lam, right, left, E)


def right_environment(state: UcpsState, env: SpectralEnvironment) -> np.ndarray:
    """``rho_r[m, n] = sum_q C[m, q] conj(C[n, q]) V_R(q)``."""
    return (state.C * env.vr) @ state.C.conj().T


def left_environment(state: UcpsState, env: SpectralEnvironment) -> np.ndarray:
    """Two-index left environment on a block: ``sum_a V_L(a) C[a, j] conj(C[a, k])``."""
    return state.C.T @ (env.vl[:, None] * state.C.conj())


def schmidt_coefficients(state: UcpsState, env: SpectralEnvironment) -> np.ndarray:
    sqrt_l = np.sqrt(np.clip(env.vl, 0.0, None))
    sqrt_r = psd_sqrt(right_environment(state, env))
    sv = singular_values(sqrt_l[:, None] * sqrt_r)
    return sv / np.sqrt(np.sum(sv**2))


def expectation_one_block(state: UcpsState, env: SpectralEnvironment, op: np.ndarray) -> complex:
    L1 = left_environment(state, env)
    rho_r = right_environment(state, env)
    return complex(np.sum(L1 * op.T * rho_r))


def expectation_two_block(
    state: UcpsState, env: SpectralEnvironment, h1: np.ndarray, h2: np.ndarray
) -> complex:
    C = state.C
    L2 = left_environment(state, env) * h1.T
    L4 = (C.T @ L2 @ C.conj()) * h2.T
    return complex(np.sum(L4 * right_environment(state, env)))


def block_energy(state: UcpsState, env: SpectralEnvironment, H: BlockHamiltonian) -> complex:
    """Unshifted energy of one block plus its coupling to the next."""
    L1 = left_environment(state, env)
    rho_r = right_environment(state, env)
    C = state.C
    intra = sum((op for op in H.intra_terms), np.zeros((state.D, state.D), dtype=np.complex128))
    total = np.sum(L1 * intra.T * rho_r)
    for h1, h2 in H.boundary_terms:
        L4 = (C.T @ (L1 * h1.T) @ C.conj()) * h2.T
        total += np.sum(L4 * rho_r)
    return complex(total)


def mixed_transfer(a: UcpsState, b: UcpsState) -> np.ndarray:
    if a.C.shape != b.C.shape or a.n != b.n or a.s != b.s:
        raise ValueError("states must share n and s")
    return a.C * b.C.conj()


def to_umps(state: UcpsState, placement: str = "copier_right") -> UmpsState:
    from .umps import UmpsState

    D = state.D
    A = np.zeros((D, D, D), dtype=np.complex128)
    idx = np.arange(D)
    if placement == "copier_right":
        A[idx, :, idx] = state.C.T
    elif placement == "copier_left":
        A[idx, idx, :] = state.C
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return UmpsState(A)


def regularised_inverse(x: np.ndarray) -> np.ndarray:
    inv, _ = safe_reciprocal(x, RECIPROCAL_FLOOR)
    return inv


def state_to_dict(state: UcpsState) -> dict:
    flat = state.C.ravel()
    return {
        "n": state.n,
        "s": state.s,
        "D": state.D,
        "C": [[float(z.real), float(z.imag)] for z in flat],
    }


def state_from_dict(record: dict) -> UcpsState:
    D = int(record["D"])
    entries = np.array([complex(re, im) for re, im in record["C"]], dtype=np.complex128)
    if entries.size != D * D:
        raise ValueError("record has the wrong number of entries")
    return UcpsState(entries.reshape(D, D), int(record["n"]), int(record["s"]))


def save_state(path: str | Path, state: UcpsState) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state)))


def load_state(path: str | Path) -> UcpsState:
    return state_from_dict(json.loads(Path(path).read_text()))
