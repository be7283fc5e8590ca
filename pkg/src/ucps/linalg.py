"""Dense complex linear algebra shared by the uCPS and uMPS engines.

Everything here is a pure function of its inputs. Matrices are plain
``numpy`` arrays; eigenvectors are stored as *columns*.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

Array = NDArray[np.complex128]
Operator = Callable[[np.ndarray], np.ndarray]

EIG_TOL = 1e-12
BICGSTAB_TOL = 1e-10
# relative distance below which eigenvalues are treated as one cluster
CLUSTER_TOL = 1e-8
PIVOT_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative routine stopped before reaching its tolerance."""

    def __init__(
        self, message: str, *, iterations: int, residual: float, solution: np.ndarray | None = None
    ) -> None:
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual
        # last iterate of the failed solve, if any
        self.solution = solution


class DefectiveMatrixError(ArithmeticError):
    """Eigenvectors of a cluster could not be biorthonormalised."""

    def __init__(self, cluster: np.ndarray, pivot: float) -> None:
        vals = ", ".join(f"{z:.6g}" for z in np.atleast_1d(cluster))
        super().__init__(f"near-defective eigenvalue cluster [{vals}] (pivot {pivot:.3e})")
        self.cluster = cluster
        self.pivot = pivot


class NotPSDError(ValueError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""


@dataclass(frozen=True)
class EigenSystem:
    """Biorthonormal eigendecomposition ``M = R diag(eigenvalues) L^T``.

    ``left[:, a] @ right[:, b] == delta_ab`` (plain product, no conjugation).
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.right * self.eigenvalues) @ self.left.T


def _check_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf entries")


def spectral_order(eigenvalues: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    """Permutation sorting by descending magnitude.

    Magnitudes equal within ``tie_tol`` (relative) are ordered by descending
    real part, then descending imaginary part, so conjugate pairs always
    come out in the same order.
    """
    lam = np.asarray(eigenvalues)
    order = list(np.argsort(-np.abs(lam), kind="stable"))
    mags = np.abs(lam)
    out: list[int] = []
    i = 0
    while i < len(order):
        j = i + 1
        ref = mags[order[i]]
        while j < len(order) and ref - mags[order[j]] <= tie_tol * max(1.0, ref):
            j += 1
        group = order[i:j]
        group.sort(key=lambda k: (-lam[k].real, -lam[k].imag))
        out.extend(group)
        i = j
    return np.asarray(out, dtype=int)


def full_eigendecomposition(m: np.ndarray, cluster_tol: float = CLUSTER_TOL) -> EigenSystem:
    """Complete eigendecomposition with biorthonormal left/right vectors.

    Raises:
        DefectiveMatrixError: if some eigenvalue cluster has a vanishing
            left/right overlap pivot, i.e. the matrix is (close to) defective.
    """
    m = np.asarray(m)
    _check_square(m)
    _check_finite(m)
    w, vl, vr = sla.eig(m, left=True, right=True)
    order = spectral_order(w)
    w = w[order]
    right = vr[:, order].astype(np.complex128)
    # scipy returns u with u^H m = w u^H; the plain-product left vector is conj(u)
    left = np.conj(vl[:, order]).astype(np.complex128)

    scale = max(np.max(np.abs(w)), np.finfo(float).tiny)
    n = w.shape[0]
    done = np.zeros(n, dtype=bool)
    for a in range(n):
        if done[a]:
            continue
        members = np.flatnonzero((~done) & (np.abs(w - w[a]) <= cluster_tol * scale))
        done[members] = True
        overlap = left[:, members].T @ right[:, members]
        sv = np.linalg.svd(overlap, compute_uv=False)
        if sv[-1] < PIVOT_TOL:
            raise DefectiveMatrixError(w[members], float(sv[-1]))
        left[:, members] = left[:, members] @ np.linalg.inv(overlap).T
    return EigenSystem(w, right, left)


def dominant_eigenpair(
    m: np.ndarray, tol: float = EIG_TOL, max_iter: int = 10_000, seed: int = 0
) -> tuple[complex, np.ndarray, np.ndarray]:
    """Largest-magnitude eigenvalue with left and right vectors by power iteration.

    Needs a strict magnitude gap to converge. The returned vectors satisfy
    ``left @ right == 1`` and ``right`` has unit norm.
    """
    m = np.asarray(m, dtype=np.complex128)
    _check_square(m)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    n = m.shape[0]

    def power(op: np.ndarray) -> tuple[complex, np.ndarray, float]:
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam = 0.0 + 0.0j
        res = np.inf
        for _ in range(max_iter):
            w = op @ v
            lam = np.vdot(v, w)
            res = np.linalg.norm(w - lam * v)
            if res <= tol * max(abs(lam), np.finfo(float).tiny):
                return complex(lam), v, res
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0j, v, 0.0
            v = w / nw
        raise ConvergenceError("power iteration did not converge", iterations=max_iter, residual=res)

    lam, right, _ = power(m)
    _, left, _ = power(m.T)
    overlap = left @ right
    if abs(overlap) < PIVOT_TOL:
        raise DefectiveMatrixError(np.array([lam]), abs(overlap))
    return lam, right, left / overlap


def bicgstab(
    apply_a: Operator,
    apply_precond: Operator | None,
    b: np.ndarray,
    tol: float = BICGSTAB_TOL,
    max_iter: int = 500,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Right-preconditioned BiCGStab for ``A x = b``.

    Operators act on arrays of the shape of ``b``. Returns the solution and
    the number of iterations used; the residual reported and tested is the
    true residual ``|A x - b| <= tol |b|``.

    Raises:
        ConvergenceError: on breakdown or when ``max_iter`` is exhausted; the
            exception carries the last iterate and its relative residual.
    """
    b = np.asarray(b, dtype=np.complex128)
    precond = apply_precond if apply_precond is not None else (lambda v: v)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.complex128)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    target = tol * bnorm
    r = b - apply_a(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x, 0
    r_hat = r.copy()
    rho_old = alpha = omega = 1.0 + 0.0j
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    breakdown = 1e-14
    for it in range(1, max_iter + 1):
        rho = np.vdot(r_hat, r)
        if abs(rho) < breakdown * np.linalg.norm(r_hat) * rnorm:
            raise ConvergenceError("BiCGStab breakdown (rho)", iterations=it, residual=rnorm / bnorm, solution=x)
        if it == 1:
            p = r.copy()
        else:
            beta = (rho / rho_old) * (alpha / omega)
            p = r + beta * (p - omega * v)
        p_hat = precond(p)
        v = apply_a(p_hat)
        denom = np.vdot(r_hat, v)
        if abs(denom) < breakdown * np.linalg.norm(r_hat) * np.linalg.norm(v):
            raise ConvergenceError(
                "BiCGStab breakdown (r_hat.v)", iterations=it, residual=rnorm / bnorm, solution=x
            )
        alpha = rho / denom
        x = x + alpha * p_hat
        s = r - alpha * v
        snorm = np.linalg.norm(s)
        if snorm <= target:
            true_res = np.linalg.norm(b - apply_a(x))
            if true_res <= target:
                return x, it
            s = b - apply_a(x)
            snorm = true_res
        s_hat = precond(s)
        t = apply_a(s_hat)
        tt = np.vdot(t, t).real
        if tt == 0.0:
            raise ConvergenceError(
                "BiCGStab breakdown (t=0)", iterations=it, residual=snorm / bnorm, solution=x
            )
        omega = np.vdot(t, s) / tt
        x = x + omega * s_hat
        r = s - omega * t
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            true_res = np.linalg.norm(b - apply_a(x))
            if true_res <= target:
                return x, it
            r = b - apply_a(x)
            rnorm = true_res
        if abs(omega) < breakdown:
            raise ConvergenceError(
                "BiCGStab breakdown (omega)", iterations=it, residual=rnorm / bnorm, solution=x
            )
        rho_old = rho
    raise ConvergenceError(
        "BiCGStab did not converge", iterations=max_iter, residual=rnorm / bnorm, solution=x
    )


def singular_values(m: np.ndarray) -> np.ndarray:
    """Descending singular values."""
    m = np.asarray(m)
    _check_finite(m)
    return sla.svdvals(m)


def psd_sqrt(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Hermitian square root of a positive semidefinite matrix.

    Eigenvalues in ``[-tol * scale, 0]`` are clamped to zero; anything more
    negative raises :class:`NotPSDError`.
    """
    m = np.asarray(m, dtype=np.complex128)
    _check_square(m)
    herm = 0.5 * (m + m.conj().T)
    w, u = np.linalg.eigh(herm)
    scale = max(np.max(np.abs(w)), 1.0) if w.size else 1.0
    if w.size and w[0] < -tol * scale:
        raise NotPSDError(f"matrix has negative eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def safe_reciprocal(x: np.ndarray, floor: float = 1e-12) -> tuple[np.ndarray, int]:
    """Elementwise ``1/x`` with magnitudes floored at ``floor * median(|x|)``.

    Phases of clamped entries are kept (zero entries get phase 0). Returns
    the reciprocal and the number of clamped entries.
    """
    x = np.asarray(x)
    mag = np.abs(x)
    positive = mag[mag > 0]
    ref = np.median(positive) if positive.size else 1.0
    lo = floor * ref
    small = mag < lo
    n_clamped = int(np.count_nonzero(small))
    if n_clamped == 0:
        return 1.0 / x, 0
    phase = np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 1.0)
    safe = np.where(small, lo * phase, x)
    return 1.0 / safe, n_clamped
