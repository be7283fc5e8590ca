"""Generic uniform MPS with a null-space-parametrised TDVP, used as a baseline.

Conventions: ``A[s]`` is the ``D x D`` matrix of physical state ``s``; the left
fixed point satisfies ``rho_l = sum_s A[s]^dag rho_l A[s]`` (bra index first)
and the right one ``rho_r = sum_s A[s] rho_r A[s]^dag`` (ket index first),
normalised so that ``tr(rho_l rho_r) = 1``. Two-site operators are
``d^2 x d^2`` matrices ``h[(s', t'), (s, t)] = <s' t'|h|s t>``.

Tangent vectors are ``dA[s] = rho_l^{-1/2} V[s] X rho_r^{-1/2}`` where the
columns of ``V`` span the orthogonal complement of ``rho_l^{1/2} A``; the
left gauge then holds identically and the Gram matrix is the identity in
``X``. The transfer map is only ever applied, never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .linalg import ConvergenceError, bicgstab, psd_sqrt, singular_values
from .models import BlockHamiltonian, LocalTerm

SPECTRUM_RESTARTS = 4


@lru_cache(maxsize=256)
def _path(subscripts: str, *shapes: tuple[int, ...]) -> list:
    operands = [np.empty(sh, dtype=np.complex128) for sh in shapes]
    return np.einsum_path(subscripts, *operands, optimize="optimal")[0]


def _einsum(subscripts: str, *operands: np.ndarray) -> np.ndarray:
    """``np.einsum`` with the contraction order planned once per shape signature."""
    return np.einsum(subscripts, *operands, optimize=_path(subscripts, *(o.shape for o in operands)))


@dataclass(frozen=True, eq=False)
class UmpsState:
    A: np.ndarray

    def __post_init__(self) -> None:
        A = np.asarray(self.A, dtype=np.complex128)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError(f"A must have shape (d, D, D), got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        object.__setattr__(self, "A", A)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def D(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True, eq=False)
class UmpsEnvironments:
    """Fixed points of the transfer map; ``eigenvalues`` holds its leading pair of magnitudes."""

    rho_l: np.ndarray
    rho_r: np.ndarray
    eigenvalues: np.ndarray = field(default_factory=lambda: np.array([1.0]))


def apply_left(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.sum(A.conj().transpose(0, 2, 1) @ x @ A, axis=0)


def apply_right(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.sum(A @ x @ A.conj().transpose(0, 2, 1), axis=0)


def _transfer_operator(A: np.ndarray, side: str) -> spla.LinearOperator:
    D = A.shape[1]
    fn = apply_left if side == "left" else apply_right

    def mv(v: np.ndarray) -> np.ndarray:
        return fn(A, v.reshape(D, D)).ravel()

    return spla.LinearOperator((D * D, D * D), matvec=mv, dtype=np.complex128)


def _dominant(A: np.ndarray, side: str, tol: float, guess: np.ndarray | None = None) -> tuple[complex, np.ndarray]:
    D = A.shape[1]
    if D == 1:
        return complex(np.sum(np.abs(A) ** 2)), np.ones((1, 1), dtype=complex)
    if guess is None:
        rng = np.random.default_rng(1)
        v0 = (np.eye(D) + 0.1 * rng.standard_normal((D, D))).ravel().astype(complex)
    else:
        v0 = np.asarray(guess, dtype=complex).ravel()
    try:
        w, v = spla.eigs(_transfer_operator(A, side), k=1, which="LM", v0=v0, tol=tol, maxiter=10_000)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("transfer fixed point did not converge", iterations=10_000, residual=np.inf) from exc
    return complex(w[0]), v[:, 0].reshape(D, D)


def _hermitian_positive(x: np.ndarray) -> np.ndarray:
    x = x / (np.trace(x) / abs(np.trace(x)))
    return 0.5 * (x + x.conj().T)


def normalize_umps(state: UmpsState, tol: float = 1e-14, guess: np.ndarray | None = None) -> UmpsState:
    lam, _ = _dominant(state.A, "right", tol, guess)
    return UmpsState(state.A / np.sqrt(abs(lam)))


def random_umps(d: int, D: int, seed: int = 0) -> UmpsState:
    rng = np.random.default_rng(seed)
    A = (rng.standard_normal((d, D, D)) + 1j * rng.standard_normal((d, D, D))) / np.sqrt(2 * d * D)
    return normalize_umps(UmpsState(A))


def umps_environments(
    state: UmpsState, tol: float = 1e-14, residual_tol: float = 1e-10, guess: UmpsEnvironments | None = None
) -> UmpsEnvironments:
    """Left and right fixed points through the transfer map (never the ``D^2`` matrix).

    ``guess`` (typically the previous step's environments) warm-starts the
    eigensolver.
    """
    A = state.A
    lam_l, rho_l = _dominant(A, "left", tol, None if guess is None else guess.rho_l)
    lam_r, rho_r = _dominant(A, "right", tol, None if guess is None else guess.rho_r)
    rho_l = _hermitian_positive(rho_l)
    rho_r = _hermitian_positive(rho_r)
    rho_l = rho_l / np.trace(rho_l @ rho_r).real
    scale = max(abs(lam_l), abs(lam_r))
    res = max(
        np.linalg.norm(apply_left(A, rho_l) - lam_l * rho_l) / np.linalg.norm(rho_l),
        np.linalg.norm(apply_right(A, rho_r) - lam_r * rho_r) / np.linalg.norm(rho_r),
    ) / max(scale, 1e-300)
    if res > residual_tol:
        raise ConvergenceError("transfer fixed-point residual too large", iterations=0, residual=float(res))
    return UmpsEnvironments(rho_l, rho_r, np.array([abs(lam_r)]))


def second_transfer_eigenvalue(
    state: UmpsState, env: UmpsEnvironments, restarts: int = SPECTRUM_RESTARTS, seed: int = 0
) -> complex:
    """Largest eigenvalue of the transfer map with the dominant pair deflated."""
    A = state.A
    D = state.D
    if D == 1:
        raise ValueError("bond dimension one has no second eigenvalue")
    rho_l, rho_r = env.rho_l, env.rho_r

    def mv(v: np.ndarray) -> np.ndarray:
        x = v.reshape(D, D)
        return (apply_right(A, x) - rho_r * np.trace(rho_l @ x)).ravel()

    op = spla.LinearOperator((D * D, D * D), matvec=mv, dtype=np.complex128)
    if D * D <= 4:
        # too small for ARPACK: build the deflated matrix column by column
        M = np.column_stack([mv(e) for e in np.eye(D * D, dtype=complex)])
        w = np.linalg.eigvals(M)
        return complex(w[np.argmax(np.abs(w))])
    rng = np.random.default_rng(seed)
    best = 0j
    k = min(2, D * D - 2)
    for _ in range(restarts):
        v0 = rng.standard_normal(D * D) + 1j * rng.standard_normal(D * D)
        w = spla.eigs(op, k=k, which="LM", v0=v0, tol=1e-12, maxiter=10_000, return_eigenvectors=False)
        cand = w[np.argmax(np.abs(w))]
        if abs(cand) > abs(best):
            best = cand
    return complex(best)


# ---------------------------------------------------------------- Hamiltonians


def two_site_matrix(terms: list[LocalTerm]) -> np.ndarray:
    """Nearest-neighbour terms as one ``4 x 4`` bond operator (fields split over both sites)."""
    h = np.zeros((4, 4), dtype=complex)
    eye = np.eye(2)
    for t in terms:
        if t.right_op is None:
            h += 0.5 * t.coefficient * (np.kron(t.left_op, eye) + np.kron(eye, t.left_op))
        else:
            h += t.coefficient * np.kron(t.left_op, t.right_op)
    return h


def block_bond_matrix(H: BlockHamiltonian) -> np.ndarray:
    """A block Hamiltonian as a bond operator between consecutive blocks (``d = 2^n``)."""
    eye = np.eye(H.dim)
    h = np.kron(H.intra_sum() + H.energy_shift * eye, eye)
    for h1, h2 in H.boundary_terms:
        h = h + np.kron(h1, h2)
    return h


def _apply_bond(A: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``Phi[s, t] = sum h[(s,t),(s',t')] A[s'] A[t']`` as a ``(d, d, D, D)`` array."""
    d, D = A.shape[0], A.shape[1]
    AA = _einsum("sab,tbc->stac", A, A).reshape(d * d, D, D)
    return np.tensordot(h, AA, axes=(1, 0)).reshape(d, d, D, D)


def umps_energy(state: UmpsState, env: UmpsEnvironments, h: np.ndarray) -> float:
    """``<h>`` on one bond."""
    return _energy_and_phi(state, env, h)[0]


def _energy_and_phi(state: UmpsState, env: UmpsEnvironments, h: np.ndarray):
    A = state.A
    Phi = _apply_bond(A, h)
    # left environment after the bond, (bra, ket) indexed
    Lh = _einsum("sxy,tyz,xa,stab->zb", A.conj(), A.conj(), env.rho_l, Phi)
    e = float(np.trace(Lh @ env.rho_r).real)
    return e, Phi, Lh


# ---------------------------------------------------------------- TDVP


@dataclass(frozen=True)
class UmpsStepReport:
    energy: float
    gradient_norm: float
    tail_iterations: int


def _inv_sqrt(rho: np.ndarray, floor: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    w, u = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.clip(w, floor * max(w.max(), 1e-300), None)
    return (u * np.sqrt(w)) @ u.conj().T, (u / np.sqrt(w)) @ u.conj().T


def null_space_basis(state: UmpsState, env: UmpsEnvironments) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``V`` of shape ``(d, D, dD - D)`` with ``sum_s V[s]^dag L A[s] = 0`` plus ``L^{-1}``, ``R^{-1}``."""
    d, D = state.d, state.D
    L, L_inv = _inv_sqrt(env.rho_l)
    _, R_inv = _inv_sqrt(env.rho_r)
    M = _einsum("ab,sbc->sac", L, state.A).reshape(d * D, D)
    V = sla.null_space(M.conj().T)
    return V.reshape(d, D, V.shape[1]), L_inv, R_inv


def umps_gradient(
    state: UmpsState, env: UmpsEnvironments, h: np.ndarray, tol: float = 1e-12, accept_residual: float = 1e-8
) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Returns ``(X-gradient F, V, energy, tail iterations)``."""
    A = state.A
    rho_l, rho_r = env.rho_l, env.rho_r
    e, Phi, Lh = _energy_and_phi(state, env, h)
    # bra gradient: hole on the first site, on the second site, and strictly right
    Y = _einsum("xa,stab,bc,tdc->sxd", rho_l, Phi, rho_r, A.conj())
    Y += _einsum("sxy,xa,stab,bc->tyc", A.conj(), rho_l, Phi, rho_r)
    Lh = Lh - e * rho_l

    def op(x: np.ndarray) -> np.ndarray:
        return x - apply_left(A, x) + np.trace(x @ rho_r) * rho_l

    try:
        y, iters = bicgstab(op, None, Lh, tol=tol, max_iter=1000)
    except ConvergenceError as exc:
        # the tail equation is roundoff-limited near the fixed point; a stalled
        # iterate at this level only perturbs the gradient at the same order
        if exc.solution is None or exc.residual > accept_residual:
            raise
        y, iters = exc.solution, exc.iterations
    Y += _einsum("xa,sab,bc->sxc", y, A, rho_r)
    V, L_inv, R_inv = null_space_basis(state, env)
    F = _einsum("sax,ab,sbc,cd->xd", V.conj(), L_inv, Y, R_inv)
    return F, V, e, iters


def tangent_from_x(X: np.ndarray, V: np.ndarray, env: UmpsEnvironments) -> np.ndarray:
    _, L_inv = _inv_sqrt(env.rho_l)
    _, R_inv = _inv_sqrt(env.rho_r)
    return _einsum("ab,sbx,xc,cd->sad", L_inv, V, X, R_inv)


def umps_tdvp_step(
    state: UmpsState, h: np.ndarray, dt: float, mode: str = "imaginary"
) -> tuple[UmpsState, UmpsStepReport]:
    """One Euler step of imaginary- or real-time TDVP for the bond operator ``h``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if mode not in ("imaginary", "real"):
        raise ValueError(f"unknown mode {mode!r}")
    env = umps_environments(state)
    F, V, e, iters = umps_gradient(state, env, h)
    dA = tangent_from_x(F, V, env)
    factor = -dt if mode == "imaginary" else -1j * dt
    new = normalize_umps(UmpsState(state.A + factor * dA))
    return new, UmpsStepReport(e, float(np.linalg.norm(F)), iters)


@dataclass
class UmpsGroundState:
    state: UmpsState
    energy: float
    converged: bool
    steps: int
    gradient_norm: float


def umps_ground_state(
    initial: UmpsState,
    h: np.ndarray,
    dt: float = 0.05,
    tol: float = 1e-8,
    max_steps: int = 20_000,
    callback: Callable[[int, float], None] | None = None,
) -> UmpsGroundState:
    """Imaginary-time Euler iteration; steps that raise the energy are retried at half ``dt``.

    ``callback(step, energy)`` is called after every accepted step.
    """
    state = normalize_umps(initial)
    env = umps_environments(state)
    F, V, e, _ = umps_gradient(state, env, h)
    steps = 0
    while steps < max_steps and np.linalg.norm(F) >= tol:
        trial = normalize_umps(UmpsState(state.A - dt * tangent_from_x(F, V, env)), guess=env.rho_r)
        try:
            env_t = umps_environments(trial, guess=env)
            F_t, V_t, e_t, _ = umps_gradient(trial, env_t, h)
        except (ArithmeticError, RuntimeError):
            e_t = np.inf
        if e_t > e + 1e-13 * max(1.0, abs(e)):
            dt *= 0.5
            if dt < 1e-8:
                break
            continue
        state, env, F, V, e = trial, env_t, F_t, V_t, e_t
        steps += 1
        if callback is not None:
            callback(steps, e)
    gnorm = float(np.linalg.norm(F))
    return UmpsGroundState(state, e, gnorm < tol, steps, gnorm)


def umps_one_site(state: UmpsState, env: UmpsEnvironments, op: np.ndarray) -> complex:
    """``<op>`` on one uMPS site."""
    A = state.A
    return complex(_einsum("xa,ts,sab,bc,txc->", env.rho_l, op, A, env.rho_r, A.conj()))


def umps_observables(state: UmpsState, h: np.ndarray, env: UmpsEnvironments | None = None) -> dict[str, float]:
    """Energy per bond, half-chain entropy and correlation length (uMPS sites)."""
    env = umps_environments(state) if env is None else env
    energy = umps_energy(state, env, h)
    sv = singular_values(psd_sqrt(env.rho_l) @ psd_sqrt(env.rho_r))
    p = sv**2 / np.sum(sv**2)
    p = p[p > 0]
    entropy = float(max(-np.sum(p * np.log(p)), 0.0))
    if state.D == 1:
        corr = 0.0
    else:
        lam2 = abs(second_transfer_eigenvalue(state, env))
        corr = 0.0 if lam2 == 0 else float(-1.0 / np.log(lam2))
    return {"energy": energy, "entropy": entropy, "corr_length": corr}
