"""Spin-1/2 chain Hamiltonians and their n-spin block form.

Sign conventions are those of the three models as commonly written with
Pauli matrices::

    ising       H = sum_i  -J Z_i Z_{i+1} + h X_i
    xy          H = -sum_i (1+g)/2 X_i X_{i+1} + (1-g)/2 Y_i Y_{i+1} + h Z_i
    heisenberg  H = sum_i  J (X_i X_{i+1} + Y_i Y_{i+1} + Z_i Z_{i+1})

Basis rotations act on the Hamiltonian (the uCPS basis stays the computational
one): every single-spin operator ``O`` becomes ``U^dag O U`` with
``U = exp(-i theta Y / 2)``.  With this convention ``Z -> cos(theta) Z - sin(theta) X``,
so ``theta = pi/2`` turns the Ising coupling into ``-J X X``, i.e. an x-basis uCPS.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=np.complex128)
SX = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SY = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SZ = np.array([[1, 0], [0, -1]], dtype=np.complex128)
PAULI = {"x": SX, "y": SY, "z": SZ, "i": I2}

MODELS = ("ising", "xy", "heisenberg")


@dataclass(frozen=True)
class LocalTerm:
    """``coefficient * left_op (x) right_op`` on neighbours, or a one-site field."""

    coefficient: float
    left_op: np.ndarray
    right_op: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "one-site" if self.right_op is None else "two-site"

    def matrix(self) -> np.ndarray:
        if self.right_op is None:
            return self.coefficient * self.left_op
        return self.coefficient * np.kron(self.left_op, self.right_op)


@dataclass(frozen=True)
class BlockHamiltonian:
    """A nearest-neighbour chain regrouped into blocks of ``n`` spins.

    ``intra_terms`` act inside one block; each ``(h1, h2)`` pair in
    ``boundary_terms`` is the coupling between the last spin of a block and
    the first spin of the next, with the coefficient folded into ``h1``.
    ``energy_shift`` is subtracted once per block.
    """

    n: int
    s: int
    intra_terms: tuple[np.ndarray, ...]
    boundary_terms: tuple[tuple[np.ndarray, np.ndarray], ...]
    energy_shift: float = 0.0
    _intra_sum: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.s**self.n

    def intra_sum(self) -> np.ndarray:
        """All single-block operators summed, minus the energy shift."""
        total = self._intra_sum
        if total is None:
            total = np.zeros((self.dim, self.dim), dtype=np.complex128)
            for op in self.intra_terms:
                total = total + op
            object.__setattr__(self, "_intra_sum", total)
        return total - self.energy_shift * np.eye(self.dim)

    def shifted(self, energy_per_block: float) -> BlockHamiltonian:
        return replace(self, energy_shift=float(energy_per_block))


def build_model(kind: str, J: float = 1.0, h: float = 0.0, gamma: float = 0.0) -> list[LocalTerm]:
    """Local terms of one of the built-in models; zero-coefficient terms are dropped."""
    for name, value in (("J", J), ("h", h), ("gamma", gamma)):
        if not np.isfinite(value):
            raise ValueError(f"parameter {name} must be finite")
    if kind == "ising":
        terms = [LocalTerm(-J, SZ, SZ), LocalTerm(h, SX)]
    elif kind == "xy":
        terms = [
            LocalTerm(-(1 + gamma) / 2, SX, SX),
            LocalTerm(-(1 - gamma) / 2, SY, SY),
            LocalTerm(-h, SZ),
        ]
    elif kind == "heisenberg":
        terms = [LocalTerm(J, SX, SX), LocalTerm(J, SY, SY), LocalTerm(J, SZ, SZ)]
    else:
        raise ValueError(f"unknown model {kind!r}; expected one of {MODELS}")
    return [t for t in terms if t.coefficient != 0.0]


def rotation(theta: float) -> np.ndarray:
    """``exp(-i theta Y / 2)``."""
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * SY


def rotate_operator(op: np.ndarray, theta: float) -> np.ndarray:
    u = rotation(theta)
    return u.conj().T @ op @ u


def rotate_basis(terms: list[LocalTerm], theta: float) -> list[LocalTerm]:
    out = []
    for t in terms:
        left = rotate_operator(t.left_op, theta)
        right = None if t.right_op is None else rotate_operator(t.right_op, theta)
        out.append(LocalTerm(t.coefficient, left, right))
    return out


def embed(ops: dict[int, np.ndarray], n: int, s: int = 2) -> np.ndarray:
    """Kronecker product with ``ops[k]`` at position ``k`` (0-based, first = most significant)."""
    eye = np.eye(s, dtype=np.complex128)
    return reduce(np.kron, [ops.get(k, eye) for k in range(n)])


def block_embed(terms: list[LocalTerm], n: int) -> BlockHamiltonian:
    if n < 1:
        raise ValueError("block size n must be >= 1")
    s = 2
    intra: list[np.ndarray] = []
    boundary: list[tuple[np.ndarray, np.ndarray]] = []
    for t in terms:
        if t.right_op is None:
            intra.append(sum(embed({k: t.coefficient * t.left_op}, n, s) for k in range(n)))
        else:
            if n > 1:
                intra.append(
                    sum(embed({k: t.coefficient * t.left_op, k + 1: t.right_op}, n, s) for k in range(n - 1))
                )
            boundary.append((embed({n - 1: t.coefficient * t.left_op}, n, s), embed({0: t.right_op}, n, s)))
    return BlockHamiltonian(n=n, s=s, intra_terms=tuple(intra), boundary_terms=tuple(boundary))


def model_hamiltonian(
    kind: str, n: int, J: float = 1.0, h: float = 0.0, gamma: float = 0.0, theta: float = 0.0
) -> BlockHamiltonian:
    """Convenience: build, rotate and block-embed in one call."""
    terms = build_model(kind, J=J, h=h, gamma=gamma)
    if theta:
        terms = rotate_basis(terms, theta)
    return block_embed(terms, n)
