"""Time-dependent variational principle on the uCPS manifold.

Tangent vectors are parametrised by a ``(D-1) x D`` matrix ``B``::

    dC = (V~_R @ B @ V_L^T) / conj(C)

where ``V~_R`` holds the subdominant right eigenvectors of ``E`` as columns.
This enforces the left tangent gauge ``sum_i V_L(i) dC_ij conj(C_ij) = 0``,
and the Gram matrix becomes the diagonal weight ``V_L(i) V_R(j) / E_ij``
sandwiched between eigenvector bases, so every product below is ``O(D^3)``.

The right-hand side ``F = <dPsi|H - e|Psi>`` is accumulated as a single
"bra gradient" ``Y`` (the derivative with respect to ``conj(C)`` at one
plaquette, summed over all placements of that plaquette relative to the
Hamiltonian term) and then projected with ``F = V~_R^dag (Y / C) conj(V_L)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .linalg import ConvergenceError, bicgstab, safe_reciprocal
from .models import BlockHamiltonian
from .state import (
    RECIPROCAL_FLOOR,
    SpectralEnvironment,
    UcpsState,
    block_energy,
    dominant_transfer_eigenvalue,
    environments,
    left_environment,
    normalize,
    right_environment,
    state_from_dict,
    state_to_dict,
    transfer_matrix,
)

log = logging.getLogger(__name__)

TAIL_GAP_TOL = 1e-10


class NearDegenerateTransferError(ArithmeticError):
    """A subdominant transfer eigenvalue is too close to one for the tail sum."""


class TdvpAbort(RuntimeError):
    """A step produced a non-finite energy; the offending state is attached."""

    def __init__(self, message: str, state: UcpsState) -> None:
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SolverOptions:
    """Settings for the linear solve ``G B = F``.

    ``preconditioner`` is ``"exact"`` (closed-form inverse of ``G``; BiCGStab
    starts from it and gets ``exact_max_iter`` iterations to polish, otherwise
    the closed form is kept), ``"gram"`` (the diagonal-weight approximate
    inverse) or ``"none"``. For the iterative modes a stalled solve is still
    used if its relative residual is below ``accept_residual``.
    """

    tol: float = 1e-10
    max_iter: int = 500
    preconditioner: str = "exact"
    accept_residual: float = 1e-6
    exact_max_iter: int = 2


@dataclass(frozen=True)
class TdvpStepReport:
    energy: float
    gradient_norm: float
    bicgstab_iters: int
    dt_used: float
    renormalisation_factor: float


@dataclass(frozen=True)
class Velocity:
    """Natural gradient at one normalised state (no time prefactor on ``dC``).

    ``energy`` is per fundamental site; ``gradient_norm`` is the norm of the
    tangent vector ``dC(B)`` per block, ``sqrt(<B, F>)``.
    """

    dC: np.ndarray
    B: np.ndarray
    F: np.ndarray
    energy: float
    gradient_norm: float
    iterations: int


# ---------------------------------------------------------------- tangent map


def _clamped_inverse(x: np.ndarray, label: str) -> np.ndarray:
    inv, n_clamped = safe_reciprocal(x, RECIPROCAL_FLOOR)
    if n_clamped:
        log.debug("%d entries of %s clamped in elementwise inverse", n_clamped, label)
    return inv


def tangent_to_dC(B: np.ndarray, env: SpectralEnvironment, state: UcpsState) -> np.ndarray:
    P = env.right[:, 1:] @ B @ env.left.T
    return P * _clamped_inverse(state.C.conj(), "conj(C)")


def gram_apply(B: np.ndarray, env: SpectralEnvironment) -> np.ndarray:
    vr_t = env.right[:, 1:]
    Q = env.gram_weights * (vr_t @ B @ env.left.T)
    return vr_t.conj().T @ Q @ env.left.conj()


def precond_apply(B: np.ndarray, env: SpectralEnvironment) -> np.ndarray:
    """Approximate inverse of :func:`gram_apply` from the weights ``1/lambda_ij``.

    Built on the dual bases (left vectors where the Gram matrix has right
    ones and vice versa). It is the inverse of the unconstrained ``D x D``
    metric restricted to the gauge-fixed block.
    """
    vl_t = env.left[:, 1:]
    Y = vl_t.conj() @ B @ env.right.conj().T
    return vl_t.T @ (env.inverse_gram_weights * Y) @ env.right


def gram_solve_exact(F: np.ndarray, env: SpectralEnvironment) -> np.ndarray:
    """Closed-form ``G^{-1} F`` in ``O(D^3)``.

    In ``P = V~_R B V_L^T`` coordinates the Gram matrix is the diagonal
    weight restricted to ``V_L^T P = 0``; the inverse is a diagonal solve plus
    one Lagrange multiplier per column.
    """
    vl = env.vl
    inv_lam = env.inverse_gram_weights
    vl_t = env.left[:, 1:]
    P = (vl_t.conj() @ F @ env.right.conj().T) * inv_lam
    mu = (vl @ P) / (vl**2 @ inv_lam)
    P = P - (vl[:, None] * inv_lam) * mu[None, :]
    return vl_t.T @ P @ env.right


# ---------------------------------------------------------------- right-hand side


def bra_gradient(state: UcpsState, env: SpectralEnvironment, H: BlockHamiltonian) -> np.ndarray:
    """``dE/d conj(C)`` per unit cell, summed over all plaquette placements.

    Placements left of a term vanish by the gauge condition; those touching
    it are contracted directly and the ones strictly right of it are summed
    with the pseudo-inverse of ``1 - E``.
    """
    C = state.C
    Cc = C.conj()
    vl, vr = env.vl, env.vr
    L1 = left_environment(state, env)
    rho_r = right_environment(state, env)

    # one-block operator on block k: holes on links (k-1,k) and (k,k+1)
    O = H.intra_sum()
    T = O.T * rho_r
    Y = vl[:, None] * (C @ T)
    S = L1 * O.T
    SC = S.T @ C
    Y += SC * vr
    x = np.sum(SC * Cc, axis=0)

    # two-block pairs on blocks k, k+1: holes on links (k-1,k), (k,k+1), (k+1,k+2)
    for h1, h2 in H.boundary_terms:
        T2 = h2.T * rho_r
        T4 = h1.T * (C @ T2 @ Cc.T)
        Y += vl[:, None] * (C @ T4)
        L2 = L1 * h1.T
        Y += L2.T @ C @ T2
        L4 = (C.T @ L2 @ Cc) * h2.T
        Z = L4.T @ C
        Y += Z * vr
        x += np.sum(Z * Cc, axis=0)

    # holes strictly to the right
    lam = env.eigenvalues[1:]
    gap = 1.0 - lam
    if lam.size and np.min(np.abs(gap)) < TAIL_GAP_TOL:
        raise NearDegenerateTransferError(
            f"subdominant transfer eigenvalue {lam[np.argmin(np.abs(gap))]:.12g} is within "
            f"{TAIL_GAP_TOL:g} of one"
        )
    y = ((x @ env.right[:, 1:]) / gap) @ env.left[:, 1:].T
    Y += (y[:, None] * C) * vr
    return Y


def rhs_gradient(state: UcpsState, env: SpectralEnvironment, H: BlockHamiltonian) -> np.ndarray:
    """``F = <d_B Psi | H | Psi>`` per unit cell in tangent coordinates.

    ``H.energy_shift`` should equal the current energy per block; with the
    pseudo-inverse tail the result is in fact independent of it.
    """
    Y = bra_gradient(state, env, H)
    W = Y * _clamped_inverse(state.C, "C")
    return env.right[:, 1:].conj().T @ W @ env.left.conj()


def energy_per_block(state: UcpsState, env: SpectralEnvironment, H: BlockHamiltonian) -> float:
    e = block_energy(state, env, H)
    return float(e.real)


# ---------------------------------------------------------------- solve and step


def solve_gram(F: np.ndarray, env: SpectralEnvironment, solver: SolverOptions = SolverOptions()) -> tuple[np.ndarray, int]:
    """Solve ``G B = F`` by preconditioned BiCGStab."""
    apply_a = lambda b: gram_apply(b, env)  # noqa: E731
    if solver.preconditioner == "exact":
        x0 = gram_solve_exact(F, env)
        try:
            return bicgstab(
                apply_a, lambda b: gram_solve_exact(b, env), F, solver.tol, solver.exact_max_iter, x0=x0
            )
        except ConvergenceError as exc:
            # for weights spanning ~1e16 the forward product, not the closed form, limits the residual
            log.debug("keeping closed-form solution: %s", exc)
            return x0, exc.iterations
    try:
        if solver.preconditioner == "gram":
            return bicgstab(apply_a, lambda b: precond_apply(b, env), F, solver.tol, solver.max_iter)
        if solver.preconditioner == "none":
            return bicgstab(apply_a, None, F, solver.tol, solver.max_iter)
    except ConvergenceError as exc:
        if exc.solution is not None and exc.residual <= solver.accept_residual:
            log.debug("accepting stalled solve: %s", exc)
            return exc.solution, exc.iterations
        raise
    raise ValueError(f"unknown preconditioner {solver.preconditioner!r}")


def velocity(
    state: UcpsState,
    H: BlockHamiltonian,
    solver: SolverOptions = SolverOptions(),
    env: SpectralEnvironment | None = None,
) -> Velocity:
    """Energy, gradient and natural-gradient direction at a normalised state."""
    env = environments(state) if env is None else env
    e_block = energy_per_block(state, env, H)
    if not np.isfinite(e_block):
        raise TdvpAbort("energy is not finite", state)
    F = rhs_gradient(state, env, H.shifted(e_block))
    B, iters = solve_gram(F, env, solver)
    dC = tangent_to_dC(B, env, state)
    gnorm = float(np.sqrt(max(np.vdot(B, F).real, 0.0)))
    return Velocity(dC, B, F, e_block / H.n, gnorm, iters)


def tdvp_step(
    state: UcpsState,
    H: BlockHamiltonian,
    dt: float,
    mode: str = "imaginary",
    solver: SolverOptions = SolverOptions(),
) -> tuple[UcpsState, TdvpStepReport]:
    """One Euler step ``C -> C - dt dC`` (imaginary) or ``C -> C - i dt dC`` (real)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if mode not in ("imaginary", "real"):
        raise ValueError(f"unknown mode {mode!r}")
    v = velocity(state, H, solver)
    factor = -dt if mode == "imaginary" else -1j * dt
    raw = state.with_C(state.C + factor * v.dC)
    scale = np.sqrt(dominant_transfer_eigenvalue(transfer_matrix(raw)))
    new = raw.with_C(raw.C / scale)
    return new, TdvpStepReport(v.energy, v.gradient_norm, v.iterations, dt, float(scale))


# ---------------------------------------------------------------- ground states


@dataclass(frozen=True)
class Schedule:
    """Imaginary-time schedule. ``dt`` is halved whenever a step raises the energy.

    ``growth > 1`` lets ``dt`` creep back up (capped at ``dt_max``) after
    accepted steps; the default keeps it fixed.
    """

    dt: float = 0.05
    tol: float = 1e-8
    max_steps: int = 5000
    dt_min: float = 1e-8
    dt_max: float | None = None
    growth: float = 1.0


@dataclass
class GroundStateResult:
    state: UcpsState
    energy: float
    converged: bool
    steps: int
    gradient_norm: float
    history: list[TdvpStepReport] = field(default_factory=list)


def ground_state(
    initial: UcpsState,
    H: BlockHamiltonian,
    schedule: Schedule = Schedule(),
    solver: SolverOptions = SolverOptions(),
    callback: Callable[[int, UcpsState, TdvpStepReport], None] | None = None,
) -> GroundStateResult:
    """Imaginary-time TDVP until the gradient norm drops below ``schedule.tol``.

    Steps that increase the energy are rejected and retried with half the
    step. The returned state is always the lowest-energy one visited.
    """
    if schedule.dt <= 0 or schedule.max_steps < 0 or schedule.tol <= 0:
        raise ValueError("invalid schedule")
    dt_max = schedule.dt if schedule.dt_max is None else schedule.dt_max
    state = normalize(initial)
    v = velocity(state, H, solver)
    dt = schedule.dt
    history: list[TdvpStepReport] = []
    steps = 0
    while steps < schedule.max_steps and v.gradient_norm >= schedule.tol:
        raw = state.with_C(state.C - dt * v.dC)
        scale = np.sqrt(dominant_transfer_eigenvalue(transfer_matrix(raw)))
        trial = raw.with_C(raw.C / scale)
        try:
            v_trial = velocity(trial, H, solver)
        except (ArithmeticError, RuntimeError) as exc:
            log.debug("step rejected at dt=%g: %s", dt, exc)
            v_trial = None
        slack = 1e-13 * max(1.0, abs(v.energy))
        if v_trial is None or v_trial.energy > v.energy + slack:
            dt *= 0.5
            if dt < schedule.dt_min:
                break
            continue
        report = TdvpStepReport(v.energy, v.gradient_norm, v.iterations, dt, float(scale))
        history.append(report)
        steps += 1
        state, v = trial, v_trial
        if callback is not None:
            callback(steps, state, report)
        dt = min(dt * schedule.growth, dt_max)
    return GroundStateResult(state, v.energy, v.gradient_norm < schedule.tol, steps, v.gradient_norm, history)


# ---------------------------------------------------------------- real time

_RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_RKF_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)


@dataclass(frozen=True)
class RkfOptions:
    rtol: float = 1e-8
    atol: float = 1e-12
    h_init: float = 1e-2
    h_min: float = 1e-10
    h_max: float = 0.1
    solver: SolverOptions = SolverOptions()


@dataclass
class Evolution:
    """Sampled trajectory. ``completed`` is False if the integrator aborted."""

    times: list[float]
    states: list[UcpsState]
    observables: dict[str, list[float]]
    completed: bool
    message: str = ""
    accepted_steps: int = 0
    rejected_steps: int = 0
    max_norm_drift: float = 0.0


def real_time_derivative(C: np.ndarray, state: UcpsState, H: BlockHamiltonian, solver: SolverOptions) -> np.ndarray:
    """``dC/dt = -i dC(B)``, made homogeneous of degree one in the scale of ``C``."""
    raw = state.with_C(C)
    scale = np.sqrt(dominant_transfer_eigenvalue(transfer_matrix(raw)))
    v = velocity(raw.with_C(C / scale), H, solver)
    return -1j * scale * v.dC


def evolve(
    initial: UcpsState,
    H: BlockHamiltonian,
    t_max: float,
    opts: RkfOptions = RkfOptions(),
    observers: Mapping[str, Callable[[UcpsState], float]] | None = None,
    output_dt: float = 0.05,
) -> Evolution:
    """Adaptive RKF45 integration of the real-time TDVP flow.

    The 5th-order solution is propagated, the embedded 4th-order one only
    sets the step. Steps are shortened to land on the output grid, where the
    observers are sampled. Each accepted state is renormalised.
    """
    if t_max <= 0 or output_dt <= 0:
        raise ValueError("t_max and output_dt must be positive")
    observers = dict(observers or {})
    state = normalize(initial)
    n_out = int(np.floor(t_max / output_dt + 1e-9))
    grid = [k * output_dt for k in range(n_out + 1)]
    if grid[-1] < t_max - 1e-12:
        grid.append(t_max)
    result = Evolution([], [], {name: [] for name in observers}, completed=False)

    def sample(t: float, s: UcpsState) -> None:
        result.times.append(t)
        result.states.append(s)
        for name, fn in observers.items():
            result.observables[name].append(float(fn(s)))

    sample(0.0, state)
    t = 0.0
    h = min(opts.h_init, opts.h_max)
    rhs = lambda C: real_time_derivative(C, state, H, opts.solver)  # noqa: E731
    for target in grid[1:]:
        while t < target - 1e-14:
            step = min(h, target - t)
            C0 = state.C
            try:
                k = []
                for i in range(6):
                    Ci = C0 + step * sum((a * kj for a, kj in zip(_RKF_A[i], k)), np.zeros_like(C0))
                    k.append(rhs(Ci))
            except (ArithmeticError, RuntimeError) as exc:
                h = step * 0.25
                result.rejected_steps += 1
                if h < opts.h_min:
                    result.message = f"step size underflow at t={t:.6g}: {exc}"
                    return result
                continue
            y5 = C0 + step * sum(b * kj for b, kj in zip(_RKF_B5, k))
            y4 = C0 + step * sum(b * kj for b, kj in zip(_RKF_B4, k))
            scale = opts.atol + opts.rtol * np.max(np.abs(C0))
            err = float(np.max(np.abs(y5 - y4)) / scale)
            if not np.isfinite(err) or err > 1.0:
                h = step * max(0.1, 0.9 * err ** -0.25) if np.isfinite(err) else step * 0.1
                result.rejected_steps += 1
                if h < opts.h_min:
                    result.message = f"step size underflow at t={t:.6g}"
                    return result
                continue
            raw = state.with_C(y5)
            lam = dominant_transfer_eigenvalue(transfer_matrix(raw))
            result.max_norm_drift = max(result.max_norm_drift, abs(lam - 1.0) / step)
            state = raw.with_C(y5 / np.sqrt(lam))
            t += step
            result.accepted_steps += 1
            grow = 5.0 if err == 0 else min(5.0, 0.9 * err ** -0.2)
            if step >= h * (1 - 1e-12):
                h = min(opts.h_max, step * grow)
            else:
                # a grid-clipped step says nothing about the achievable size
                h = max(h, min(opts.h_max, step * grow))
        t = target
        sample(target, state)
    result.completed = True
    return result


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, state: UcpsState, step: int, rng_state: dict | None = None, **extra) -> None:
    """Write state, step counter and generator state as JSON (floats round-trip exactly)."""
    record = {"state": state_to_dict(state), "step": int(step), "rng_state": rng_state, "extra": extra}
    Path(path).write_text(json.dumps(record))


def load_checkpoint(path: str | Path) -> tuple[UcpsState, int, dict | None, dict]:
    record = json.loads(Path(path).read_text())
    return state_from_dict(record["state"]), int(record["step"]), record["rng_state"], record.get("extra", {})
