"""Uniform grids, finite-difference stencils, tridiagonal solves and quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack


class SingularSystemError(ArithmeticError):
    """Raised when a tridiagonal elimination hits a (near-)zero pivot."""


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [x_min, x_max] x [0, 1].

    ``M`` is the number of space nodes and ``N`` the number of time steps,
    so there are ``N + 1`` time levels.
    """

    x_min: float
    x_max: float
    M: int
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)):
            raise ValueError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"empty interval [{self.x_min}, {self.x_max}]")
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"M must be an integer >= 3, got {self.M}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.M - 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.N

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.M)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)


def make_grid(x_min, x_max, M, N) -> Grid:
    return Grid(float(x_min), float(x_max), int(M), int(N))


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Solve ``lower[i] y[i-1] + diag[i] y[i] + upper[i] y[i+1] = rhs[i]``.

    All four arrays have the system length ``n``; ``lower[0]`` and
    ``upper[-1]`` lie outside the matrix and are ignored. Backed by LAPACK
    ``gtsv`` (Gaussian elimination with partial pivoting).
    """
    diag = np.asarray(diag, dtype=float)
    n = diag.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if lower.shape != (n,) or upper.shape != (n,) or rhs.shape[0] != n:
        raise ValueError("tridiagonal bands and rhs must share the system length")
    if n == 1:
        if diag[0] == 0.0:
            raise SingularSystemError("zero pivot in 1x1 system")
        return rhs / diag[0]
    _, _, _, y, info = lapack.dgtsv(lower[1:], diag, upper[:-1], rhs)
    if info > 0:
        raise SingularSystemError(f"zero pivot at row {info - 1}")
    if info < 0:
        raise ValueError(f"illegal argument {-info} passed to gtsv")
    if not np.all(np.isfinite(y)):
        raise SingularSystemError("near-zero pivot produced a non-finite solution")
    return y


def tridiagonal_matvec(lower, diag, upper, y) -> np.ndarray:
    """Multiply the tridiagonal matrix given by per-row bands with ``y``."""
    out = np.asarray(diag) * y
    out[1:] += np.asarray(lower)[1:] * y[:-1]
    out[:-1] += np.asarray(upper)[:-1] * y[1:]
    return out


def central_first_derivative(field, dx) -> np.ndarray:
    """Central difference inside, forward at the left node, backward at the right."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] < 3:
        raise ValueError("field needs at least 3 nodes")
    d = np.empty_like(f)
    d[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * dx)
    d[..., 0] = (f[..., 1] - f[..., 0]) / dx
    d[..., -1] = (f[..., -1] - f[..., -2]) / dx
    return d


def second_difference(field, dx) -> np.ndarray:
    """Standard three-point second difference; zero at both boundary nodes."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] < 3:
        raise ValueError("field needs at least 3 nodes")
    d = np.zeros_like(f)
    d[..., 1:-1] = (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / dx**2
    return d


def reflecting_second_difference(field, dx) -> np.ndarray:
    """Three-point second difference with mirror ghost nodes (zero flux at the walls)."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] < 3:
        raise ValueError("field needs at least 3 nodes")
    d = np.empty_like(f)
    d[..., 1:-1] = (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / dx**2
    d[..., 0] = 2.0 * (f[..., 1] - f[..., 0]) / dx**2
    d[..., -1] = 2.0 * (f[..., -2] - f[..., -1]) / dx**2
    return d


def upwind_differences(field, dx):
    """Forward and backward differences ``(D+ f, D- f)``.

    The difference pointing out of the domain is zero (``D+ f`` at the right
    node, ``D- f`` at the left node), so drift directed outward is inert.
    """
    f = np.asarray(field, dtype=float)
    if f.shape[-1] < 2:
        raise ValueError("field needs at least 2 nodes")
    fwd = np.zeros_like(f)
    bwd = np.zeros_like(f)
    fwd[..., :-1] = (f[..., 1:] - f[..., :-1]) / dx
    bwd[..., 1:] = fwd[..., :-1]
    return fwd, bwd


STENCILS = ("upwind", "central")


def generator_bands(drift, diffusion, dx, stencil="upwind"):
    """Per-row bands of the discrete generator ``G = B D1 + (A/2) D2``.

    ``stencil="upwind"`` differences the drift term along the sign of ``B``
    (:func:`upwind_differences`) and treats the walls as reflecting
    (:func:`reflecting_second_difference`): off-diagonals are nonnegative,
    so ``I - dt G`` is an M-matrix for every ``dt``. ``stencil="central"``
    uses :func:`central_first_derivative` and :func:`second_difference`
    (one-sided drift and no diffusion at the edges); it loses the M-matrix
    property once ``|B| dx > A``. Rows sum to zero in both.
    """
    B = np.asarray(drift, dtype=float)
    A = np.asarray(diffusion, dtype=float)
    half_a = 0.5 * A / dx**2
    if stencil == "upwind":
        bp = np.maximum(B, 0.0) / dx
        bm = np.maximum(-B, 0.0) / dx
        lower = half_a + bm
        upper = half_a + bp
        lower[0] = 0.0
        upper[0] = 2.0 * half_a[0] + bp[0]
        lower[-1] = 2.0 * half_a[-1] + bm[-1]
        upper[-1] = 0.0
        diag = -(lower + upper)
    elif stencil == "central":
        half_b = 0.5 * B / dx
        lower = half_a - half_b
        upper = half_a + half_b
        diag = -2.0 * half_a
        lower[0] = 0.0
        diag[0] = -B[0] / dx
        upper[0] = B[0] / dx
        lower[-1] = -B[-1] / dx
        diag[-1] = B[-1] / dx
        upper[-1] = 0.0
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    return lower, diag, upper


def integrate(field, dx) -> float:
    """Rectangle rule ``sum(f) * dx`` over the trailing axis."""
    return np.sum(np.asarray(field, dtype=float), axis=-1) * dx
