"""Backward implicit finite-difference solver for the HJB equation.

Each time step solves

    phi^n - dt * (B D1 phi^n + A/2 D2 phi^n) = phi^{n+1} - dt * F(B, A)

with the controls ``(B, A)`` re-maximized from ``phi^n`` until the slice
stops changing (policy iteration on one step). The drift term is
differenced upwind by default, with reflecting walls, which makes every
step matrix an M-matrix and the scheme monotone; ``stencil="central"``
(zero second difference at the edges) is kept for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import EmptyControlSetError, maximize_hamiltonian, maximize_hamiltonian_upwind
from .numerics import (
    Grid,
    SingularSystemError,
    central_first_derivative,
    generator_bands,
    reflecting_second_difference,
    second_difference,
    solve_tridiagonal,
    upwind_differences,
)

log = logging.getLogger(__name__)


class HJBError(RuntimeError):
    def __init__(self, message, time_index):
        super().__init__(f"time step {time_index}: {message}")
        self.time_index = time_index


@dataclass
class ControlField:
    """Optimal drift ``B`` and diffusion ``A``, shape ``(N, M)``; row n acts on [t_n, t_{n+1}]."""

    B: np.ndarray
    A: np.ndarray


@dataclass
class DualPotential:
    values: np.ndarray  # (N + 1, M)

    @property
    def phi1(self):
        return self.values[-1]

    @property
    def phi0(self):
        return self.values[0]


@dataclass
class StepResult:
    phi: np.ndarray
    B: np.ndarray
    A: np.ndarray
    iterations: int
    residual: float
    converged: bool


@dataclass
class HJBSolution:
    potential: DualPotential
    controls: ControlField
    iterations: np.ndarray  # fixed-point solves per step
    unconverged_steps: list = field(default_factory=list)


def optimal_controls(phi, cost, nu, dx, stencil="upwind"):
    if stencil == "upwind":
        fwd, bwd = upwind_differences(phi, dx)
        q = 0.5 * reflecting_second_difference(phi, dx)
        B, A, _ = maximize_hamiltonian_upwind(fwd, bwd, q, nu, cost)
    elif stencil == "central":
        q = 0.5 * second_difference(phi, dx)
        B, A, _ = maximize_hamiltonian(central_first_derivative(phi, dx), q, nu, cost)
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    return B, A


def step_matrix(B, A, dx, dt, stencil="upwind"):
    """Bands of ``I - dt * G(B, A)``."""
    lower, diag, upper = generator_bands(B, A, dx, stencil)
    return -dt * lower, 1.0 - dt * diag, -dt * upper


def hjb_backward_step(
    phi_next, cost, nu, grid: Grid, fp_tol=1e-8, fp_max_iter=50, stencil="upwind"
) -> StepResult:
    """One implicit step from ``phi^{n+1}`` to ``phi^n``.

    ``cost`` must already be resolved at ``t_n`` and ``nu`` is ``||nu_{t_n}||``.
    The returned controls are the ones used in the final linear solve, so
    the slice satisfies the discrete equation with them exactly.
    """
    dx, dt = grid.dx, grid.dt
    phi_next = np.asarray(phi_next, dtype=float)
    B, A = optimal_controls(phi_next, cost, nu, dx, stencil)
    phi_prev = None
    last_diff = np.inf
    increases = 0
    relax = False
    diff = np.inf
    for it in range(1, fp_max_iter + 1):
        lower, diag, upper = step_matrix(B, A, dx, dt, stencil)
        rhs = phi_next - dt * cost.value(B, A, nu)
        phi = solve_tridiagonal(lower, diag, upper, rhs)
        if phi_prev is not None:
            diff = float(np.linalg.norm(phi - phi_prev))
            if diff <= fp_tol:
                return StepResult(phi, B, A, it, diff, True)
            if diff > last_diff:
                increases += 1
                relax = relax or increases >= 2
            last_diff = diff
        B_new, A_new = optimal_controls(phi, cost, nu, dx, stencil)
        if relax:
            B_new = 0.5 * (B + B_new)
            A_new = 0.5 * (A + A_new)
        B, A = B_new, A_new
        phi_prev = phi
    return StepResult(phi, B, A, fp_max_iter, diff, False)


def solve_hjb(
    phi1, cost, market, grid: Grid, fp_tol=1e-8, fp_max_iter=50, stencil="upwind"
) -> HJBSolution:
    """March the HJB equation from ``phi(1, .) = phi1`` back to ``t = 0``."""
    phi1 = np.asarray(phi1, dtype=float)
    if phi1.shape != (grid.M,) or not np.all(np.isfinite(phi1)):
        raise ValueError("phi1 must be a finite array with one value per node")
    N, M = grid.N, grid.M
    nu = market.nu_levels(grid)
    values = np.empty((N + 1, M))
    values[N] = phi1
    B = np.empty((N, M))
    A = np.empty((N, M))
    iters = np.zeros(N, dtype=int)
    unconverged = []
    for n in range(N - 1, -1, -1):
        t = n * grid.dt
        try:
            res = hjb_backward_step(
                values[n + 1], cost.at(t), nu[n], grid, fp_tol, fp_max_iter, stencil
            )
        except (SingularSystemError, EmptyControlSetError) as exc:
            raise HJBError(str(exc), n) from exc
        if not res.converged:
            unconverged.append((n, res.residual))
            log.warning("fixed point at step %d stopped with residual %.3e", n, res.residual)
        values[n], B[n], A[n], iters[n] = res.phi, res.B, res.A, res.iterations
    return HJBSolution(DualPotential(values), ControlField(B, A), iters, unconverged)
