"""Brute-force reference contractions through the mapped uMPS.

Everything here builds the full ``D^2 x D^2`` transfer matrices and sums
tangent placements explicitly, so it shares no contraction order with the
library kernels. Only usable for small D.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ucps.models import BlockHamiltonian
from ucps.state import UcpsState


def mapped_tensor(C: np.ndarray) -> np.ndarray:
    """``A[p, a, b] = C[a, b] delta(p, b)``."""
    D = C.shape[0]
    A = np.zeros((D, D, D), dtype=complex)
    for p in range(D):
        A[p, :, p] = C[:, p]
    return A


def transfer(ket: np.ndarray, bra: np.ndarray, op: np.ndarray | None = None) -> np.ndarray:
    """``sum_{p,q} op[q, p] ket[p] (x) conj(bra[q])``; ``op=None`` means identity."""
    d = ket.shape[0]
    op = np.eye(d) if op is None else op
    out = 0
    for p in range(d):
        for q in range(d):
            if op[q, p] != 0:
                out = out + op[q, p] * np.kron(ket[p], bra[q].conj())
    return out


def fixed_points(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T = transfer(A, A)
    w, vl, vr = sla.eig(T, left=True, right=True)
    k = np.argmax(np.abs(w))
    assert abs(w[k] - 1) < 1e-10
    l = vl[:, k].conj()
    r = vr[:, k]
    return l / (l @ r), r


def energy_per_block(state: UcpsState, H: BlockHamiltonian) -> complex:
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    total = l @ transfer(A, A, H.intra_sum()) @ r
    for h1, h2 in H.boundary_terms:
        total += l @ transfer(A, A, h1) @ transfer(A, A, h2) @ r
    return total


def one_block(state: UcpsState, op: np.ndarray) -> complex:
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    return l @ transfer(A, A, op) @ r


def two_block(state: UcpsState, h1: np.ndarray, h2: np.ndarray) -> complex:
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    return l @ transfer(A, A, h1) @ transfer(A, A, h2) @ r


def _placement_sum(A, dA, ops, l, r, reach):
    """``sum_m <dA at m | ops at 0, 1, ... | A>`` for offsets ``|m| <= reach``."""
    T = transfer(A, A)
    width = len(ops)
    total = 0
    for m in range(-reach, reach + width):
        lo = min(m, 0)
        hi = max(m, width - 1)
        v = l
        for site in range(lo, hi + 1):
            op = ops[site] if 0 <= site < width else None
            bra = dA if site == m else A
            v = v @ (transfer(A, bra, op) if (op is not None or site == m) else T)
        total += v @ r
    return total


def rhs(state: UcpsState, H: BlockHamiltonian, basis_dC, reach: int = 120) -> np.ndarray:
    """``<dPsi_e | H - e | Psi>`` for each tangent ``dC`` in ``basis_dC``."""
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    e = energy_per_block(state, H)
    Hs = H.shifted(e.real)
    out = []
    for dC in basis_dC:
        dA = mapped_tensor(dC)
        val = _placement_sum(A, dA, [Hs.intra_sum()], l, r, reach)
        for h1, h2 in H.boundary_terms:
            val += _placement_sum(A, dA, [h1, h2], l, r, reach)
        out.append(val)
    return np.array(out)


def gram(state: UcpsState, basis_dC, reach: int = 3) -> np.ndarray:
    """Dense ``<dPsi_a | dPsi_b>`` per unit cell including off-site overlaps."""
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    T = transfer(A, A)
    dAs = [mapped_tensor(dC) for dC in basis_dC]
    k = len(dAs)
    G = np.zeros((k, k), dtype=complex)
    for a in range(k):
        for b in range(k):
            val = l @ transfer(dAs[b], dAs[a]) @ r
            mid = np.eye(T.shape[0])
            for _ in range(reach):
                val += l @ transfer(A, dAs[a]) @ mid @ transfer(dAs[b], A) @ r
                val += l @ transfer(dAs[b], A) @ mid @ transfer(A, dAs[a]) @ r
                mid = mid @ T
            G[a, b] = val
    return G


def unconstrained_gram_inverse(state: UcpsState, env) -> np.ndarray:
    """Inverse of the on-site metric over all ``D x D`` coefficient matrices ``B``,
    restricted to the rows ``1..D-1`` used by gauge-fixed tangent vectors."""
    A = mapped_tensor(state.C)
    l, r = fixed_points(A)
    D = state.D
    dAs = []
    for a in range(D):
        for b in range(D):
            B = np.zeros((D, D), dtype=complex)
            B[a, b] = 1
            dAs.append(mapped_tensor((env.right @ B @ env.left.T) / state.C.conj()))
    G = np.array([[l @ transfer(dAs[j], dAs[i]) @ r for j in range(D * D)] for i in range(D * D)])
    keep = [a * D + b for a in range(1, D) for b in range(D)]
    return np.linalg.inv(G)[np.ix_(keep, keep)]
