"""Euler-Maruyama simulation of wealth paths under solved control fields.

An independent check on the PDE pipeline: terminal samples are compared
with the transported density, and per-path cash saving and cash input are
compared with their PDE expectations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fokker_planck import frontier_drift
from .hjb import ControlField
from .numerics import Grid

# Paths draw noise in fixed blocks keyed by (seed, block index), so a path's
# stream depends only on the seed and its own index.
BLOCK = 1024
MAX_CLAMP_FRACTION = 0.01


class ClampError(RuntimeError):
    pass


@dataclass
class PathEnsemble:
    terminal_wealth: np.ndarray
    terminal_saving: np.ndarray
    terminal_input: np.ndarray
    n_paths: int
    seed: int
    clamp_fraction: float

    def __post_init__(self):
        n = self.n_paths
        if not (len(self.terminal_wealth) == len(self.terminal_saving) == len(self.terminal_input) == n):
            raise ValueError("sample arrays must all have n_paths entries")

    def mean_saving(self):
        """Sample mean of C_1 and its standard error."""
        c = self.terminal_saving
        return float(c.mean()), float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else np.nan

    def mean_input(self):
        c = self.terminal_input
        return float(c.mean()), float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else np.nan


def _noise(seed, first, count, N):
    """Standard normals for paths ``first .. first + count - 1``, shape ``(N, count)``."""
    out = np.empty((N, count))
    b0, b1 = first // BLOCK, (first + count - 1) // BLOCK
    for b in range(b0, b1 + 1):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(b,))))
        z = rng.standard_normal((BLOCK, N))
        lo = max(first, b * BLOCK)
        hi = min(first + count, (b + 1) * BLOCK)
        out[:, lo - first : hi - first] = z[lo - b * BLOCK : hi - b * BLOCK].T
    return out


def simulate_paths(
    controls: ControlField,
    x0,
    n_paths,
    seed,
    grid: Grid,
    market,
    batch=BLOCK * 16,
    max_clamp_fraction=MAX_CLAMP_FRACTION,
) -> PathEnsemble:
    """Simulate ``dX = B* dt + sqrt(A*) dW`` from ``X_0 = x0`` with the solver's time step.

    Controls are held constant on each step and interpolated linearly in
    space (boundary values beyond the ends). Paths leaving the domain are
    clamped to it; if more than ``max_clamp_fraction`` of paths are ever
    clamped, :class:`ClampError` is raised.
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    N, dt = grid.N, grid.dt
    x = grid.x
    B_field = np.asarray(controls.B, dtype=float)
    A_field = np.asarray(controls.A, dtype=float)
    if B_field.shape != (N, grid.M) or A_field.shape != B_field.shape:
        raise ValueError("control fields must have shape (N, M)")
    front = frontier_drift(controls, market, grid)
    gap_field = front - B_field
    wealth = np.empty(n_paths)
    saving = np.empty(n_paths)
    cash_in = np.empty(n_paths)
    clamped = np.zeros(n_paths, dtype=bool)
    sq_dt = np.sqrt(dt)
    for first in range(0, n_paths, batch):
        count = min(batch, n_paths - first)
        Z = _noise(seed, first, count, N)
        X = np.full(count, float(x0))
        C = np.zeros(count)
        I = np.zeros(count)
        hit = np.zeros(count, dtype=bool)
        for n in range(N):
            B = np.interp(X, x, B_field[n])
            A = np.maximum(np.interp(X, x, A_field[n]), 0.0)
            g = np.interp(X, x, gap_field[n])
            C += np.maximum(g, 0.0) * dt
            I += np.maximum(-g, 0.0) * dt
            X = X + B * dt + np.sqrt(A) * sq_dt * Z[n]
            out = (X < grid.x_min) | (X > grid.x_max)
            if out.any():
                hit |= out
                np.clip(X, grid.x_min, grid.x_max, out=X)
        sl = slice(first, first + count)
        wealth[sl], saving[sl], cash_in[sl], clamped[sl] = X, C, I, hit
    frac = float(clamped.mean())
    if frac > max_clamp_fraction:
        raise ClampError(f"{frac:.2%} of paths left the domain (limit {max_clamp_fraction:.0%})")
    return PathEnsemble(wealth, saving, cash_in, n_paths, int(seed), frac)


def ks_distance(samples, density, grid: Grid, cdf="step") -> float:
    """Sup distance between the empirical CDF of ``samples`` and the density's CDF.

    ``cdf="step"`` uses the cumulative sum of nodal masses (a node's mass
    sits at the node). ``cdf="linear"`` spreads each node's mass uniformly
    over its cell ``[x_i - dx/2, x_i + dx/2]``.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("no samples")
    mass = np.asarray(density, dtype=float) * grid.dx
    F_nodes = np.cumsum(mass) / mass.sum()
    n = s.size
    if cdf == "step":
        pts = np.concatenate((s, grid.x))
        F_emp = np.searchsorted(s, pts, side="right") / n
        idx = np.searchsorted(grid.x, pts, side="right") - 1
        F_mod = np.where(idx >= 0, F_nodes[np.clip(idx, 0, None)], 0.0)
        return float(np.max(np.abs(F_emp - F_mod)))
    if cdf == "linear":
        edges = np.concatenate(([grid.x[0] - grid.dx / 2], grid.x + grid.dx / 2))
        F = np.interp(s, edges, np.concatenate(([0.0], F_nodes)))
        k = np.arange(1, n + 1)
        return float(max(np.max(k / n - F), np.max(F - (k - 1) / n)))
    raise ValueError(f"unknown cdf {cdf!r}")
