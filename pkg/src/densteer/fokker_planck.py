"""Forward propagation of wealth densities under given control fields."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .hjb import ControlField, step_matrix
from .numerics import Grid, integrate, solve_tridiagonal

log = logging.getLogger(__name__)

NEG_TOL = 1e-10


class CFLError(ValueError):
    pass


@dataclass
class Trajectory:
    """Density slices at every time level, shape ``(N + 1, M)``."""

    values: np.ndarray
    substeps: np.ndarray  # explicit sub-steps used per coarse step (1 for implicit)
    scheme: str

    @property
    def terminal(self):
        return self.values[-1]

    def mass(self, dx):
        return integrate(self.values, dx)

    def mass_drift(self, dx) -> float:
        m = self.mass(dx)
        return float(np.max(np.abs(m - m[0])))

    @property
    def min_density(self) -> float:
        return float(self.values.min())


@dataclass
class CashDiagnostics:
    expected_saving: float
    expected_input: float


def initial_density(x0, grid: Grid, mollifier_width=2.0) -> np.ndarray:
    """Mollified point mass at ``x0``; ``mollifier_width`` is in units of ``dx``."""
    if not grid.x_min <= x0 <= grid.x_max:
        raise ValueError(f"x0 = {x0} lies outside [{grid.x_min}, {grid.x_max}]")
    if mollifier_width < 0:
        raise ValueError("mollifier width must be nonnegative")
    x = grid.x
    if mollifier_width == 0:
        rho = np.zeros(grid.M)
        rho[int(np.argmin(np.abs(x - x0)))] = 1.0
    else:
        s = mollifier_width * grid.dx
        rho = np.exp(-0.5 * ((x - x0) / s) ** 2)
    return rho / integrate(rho, grid.dx)


def _explicit_step(rho, B, A, dx, dt):
    # central differences of the fluxes B rho and A rho, zero density at both ends
    out = np.zeros_like(rho)
    f = B * rho
    g = A * rho
    out[1:-1] = rho[1:-1] - dt * (f[2:] - f[:-2]) / (2 * dx) + 0.5 * dt * (
        g[2:] - 2 * g[1:-1] + g[:-2]
    ) / dx**2
    return out


def fp_forward(
    rho0,
    drift,
    diffusion,
    grid: Grid,
    scheme="explicit",
    cfl_safety=0.9,
    substep=True,
    neg_tol=NEG_TOL,
    stencil="upwind",
) -> Trajectory:
    """Propagate ``rho0`` through the ``N`` steps of ``drift``/``diffusion`` (each ``(N, M)``).

    ``scheme="explicit"`` is the central explicit scheme with zero boundary
    densities; when ``dt`` breaks the diffusive CFL bound the step is split
    into equal sub-steps (or :class:`CFLError` is raised if ``substep`` is
    off). ``scheme="implicit"`` applies ``(I - dt G)^{-T}``, the transpose of
    the implicit HJB step built with ``stencil``; it is exactly
    mass-preserving, and with the upwind stencil also positivity-preserving
    for every ``dt``.
    """
    dx, dt = grid.dx, grid.dt
    drift = np.asarray(drift, dtype=float)
    diffusion = np.asarray(diffusion, dtype=float)
    if drift.shape != (grid.N, grid.M) or diffusion.shape != drift.shape:
        raise ValueError("control fields must have shape (N, M)")
    rho = np.asarray(rho0, dtype=float).copy()
    out = np.empty((grid.N + 1, grid.M))
    out[0] = rho
    nsub = np.ones(grid.N, dtype=int)
    for n in range(grid.N):
        B, A = drift[n], diffusion[n]
        if scheme == "explicit":
            a_max = float(np.max(A))
            limit = cfl_safety * dx**2 / a_max if a_max > 0 else math.inf
            k = max(1, math.ceil(dt / limit - 1e-12))
            if k > 1 and not substep:
                raise CFLError(f"step {n}: dt = {dt:g} exceeds the CFL limit {limit:g}")
            h = dt / k
            for _ in range(k):
                rho = _explicit_step(rho, B, A, dx, h)
            nsub[n] = k
        elif scheme == "implicit":
            lower, diag, upper = step_matrix(B, A, dx, dt, stencil)
            lower_t = np.concatenate(([0.0], upper[:-1]))
            upper_t = np.concatenate((lower[1:], [0.0]))
            rho = solve_tridiagonal(lower_t, diag, upper_t, rho)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        out[n + 1] = rho
    traj = Trajectory(out, nsub, scheme)
    if traj.min_density < -neg_tol:
        log.warning("density dipped to %.3e (neg_tol %.1e)", traj.min_density, neg_tol)
    return traj


def frontier_drift(controls: ControlField, market, grid: Grid):
    """Self-financing maximal drift ``||nu_t|| sqrt(A)`` per step."""
    nu = market.nu_levels(grid)[:-1, None]
    return nu * np.sqrt(np.maximum(controls.A, 0.0))


def wealth_with_saving_trajectory(rho0, controls: ControlField, market, grid: Grid, **kw):
    """Density of wealth plus accumulated cash saving (drift on the frontier)."""
    return fp_forward(rho0, frontier_drift(controls, market, grid), controls.A, grid, **kw)


def without_cash_input_trajectory(rho0, controls: ControlField, market, grid: Grid, **kw):
    """Density of wealth minus accumulated cash input (drift capped at the frontier)."""
    drift = np.minimum(controls.B, frontier_drift(controls, market, grid))
    return fp_forward(rho0, drift, controls.A, grid, **kw)


def cash_diagnostics(controls: ControlField, rho, market, grid: Grid) -> CashDiagnostics:
    """Expected accumulated saving and input, weighting step n by the density at t_n."""
    rho = rho.values if isinstance(rho, Trajectory) else np.asarray(rho)
    gap = frontier_drift(controls, market, grid) - controls.B
    w = rho[:-1] * grid.dx * grid.dt
    return CashDiagnostics(
        expected_saving=float(np.sum(np.maximum(gap, 0.0) * w)),
        expected_input=float(np.sum(np.maximum(-gap, 0.0) * w)),
    )
