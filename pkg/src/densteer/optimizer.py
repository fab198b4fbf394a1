"""Outer quasi-Newton loop on the terminal potential ``phi1``.

The objective is ``V~(phi1) = C*(-phi1) + int phi0 rho0``; its gradient
with respect to the nodal values of ``phi1`` is
``(dC*(-phi1)/dphi1 + rho1) * dx`` where ``rho1`` is the forward-propagated
terminal density under the HJB controls.

``rho1`` responds to ``phi1`` through a smoothing map, so the nodal
gradient is badly scaled across frequencies. Search directions are
therefore measured in an H^1-type metric: the L-BFGS initial inverse
Hessian is ``(I - l^2 D2)^{-1}`` with Neumann ends (``precond_length = l``;
0 gives plain L-BFGS).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import model
from .fokker_planck import (
    CashDiagnostics,
    Trajectory,
    cash_diagnostics,
    fp_forward,
    initial_density,
    wealth_with_saving_trajectory,
    without_cash_input_trajectory,
)
from .hamiltonian import admissible
from .hjb import ControlField, solve_hjb
from .numerics import Grid, integrate, solve_tridiagonal

log = logging.getLogger(__name__)


@dataclass
class Tolerances:
    fp_tol: float = 1e-8
    fp_max_iter: int = 50
    grad_tol: float = 1e-5
    max_outer_iter: int = 500
    memory: int = 10
    armijo_c1: float = 1e-4
    max_backtracks: int = 30
    gap_tol: float = 1e-6
    precond_length: float = 2.0


@dataclass
class Problem:
    """Everything one dual solve needs, with the target already on the grid."""

    grid: Grid
    market: model.MarketParams
    x0: float
    target: np.ndarray
    cost: model.CostSpec
    penalty: model.PenaltySpec
    tol: Tolerances = field(default_factory=Tolerances)
    mollifier_width: float = 2.0
    fp_scheme: str = "implicit"
    stencil: str = "upwind"
    cfl_safety: float = 0.9

    @property
    def rho0(self):
        return initial_density(self.x0, self.grid, self.mollifier_width)


@dataclass
class DualEvaluation:
    V_tilde: float
    gradient: np.ndarray
    rho1: np.ndarray
    phi: np.ndarray
    controls: ControlField
    rho: Trajectory
    fp_iterations: np.ndarray
    unconverged_steps: list
    kl_clamped: bool


@dataclass
class SolveReport:
    phi1_opt: np.ndarray
    V_tilde: float
    dual_value: float
    primal_cost: float
    duality_gap: float
    penalty_value: float
    rho_trajectory: Trajectory
    p_trajectory: Trajectory
    q_trajectory: Trajectory
    controls: ControlField
    potential: np.ndarray
    cash: CashDiagnostics
    iterations: list
    termination_reason: str
    target: np.ndarray
    grid: Grid
    diagnostics: dict = field(default_factory=dict)

    @property
    def rho1(self):
        return self.rho_trajectory.terminal

    @property
    def l2_distance(self) -> float:
        return float(np.sqrt(integrate((self.rho1 - self.target) ** 2, self.grid.dx)))


def evaluate_dual(phi1, problem: Problem, rho0=None) -> DualEvaluation:
    grid = problem.grid
    dx = grid.dx
    phi1 = np.asarray(phi1, dtype=float)
    rho0 = problem.rho0 if rho0 is None else rho0
    sol = solve_hjb(
        phi1,
        problem.cost,
        problem.market,
        grid,
        problem.tol.fp_tol,
        problem.tol.fp_max_iter,
        problem.stencil,
    )
    traj = fp_forward(
        rho0,
        sol.controls.B,
        sol.controls.A,
        grid,
        scheme=problem.fp_scheme,
        cfl_safety=problem.cfl_safety,
        stencil=problem.stencil,
    )
    rho1 = traj.terminal
    pen = problem.penalty
    V = model.conjugate_value(pen, phi1, problem.target, dx) + integrate(
        sol.potential.phi0 * rho0, dx
    )
    grad = (model.conjugate_gradient(pen, phi1, problem.target) + rho1) * dx
    return DualEvaluation(
        V_tilde=float(V),
        gradient=grad,
        rho1=rho1,
        phi=sol.potential.values,
        controls=sol.controls,
        rho=traj,
        fp_iterations=sol.iterations,
        unconverged_steps=sol.unconverged_steps,
        kl_clamped=model.conjugate_overflow(pen, phi1),
    )


def running_cost(rho, controls: ControlField, cost, market, grid: Grid) -> float:
    """``sum_n dt dx sum_i F(B^n_i, A^n_i) rho^{n+1}_i``.

    Weighting step n by the density at the end of the step makes the
    discrete duality identity exact under the implicit transport.
    """
    rho = rho.values if isinstance(rho, Trajectory) else np.asarray(rho)
    nu = market.nu_levels(grid)
    total = 0.0
    for n in range(grid.N):
        c = cost.at(n * grid.dt)
        total += np.sum(c.value(controls.B[n], controls.A[n], nu[n]) * rho[n + 1])
    return float(total * grid.dx * grid.dt)


def primal_cost(rho, controls: ControlField, cost, penalty, target, market, grid: Grid) -> float:
    """Running cost plus terminal penalty.

    The indicator penalty contributes 0 here; its terminal mismatch is
    reported separately, since at a finite-tolerance iterate it would
    otherwise always be infinite.
    """
    rho_v = rho.values if isinstance(rho, Trajectory) else np.asarray(rho)
    run = running_cost(rho_v, controls, cost, market, grid)
    if isinstance(penalty, model.Indicator):
        return run
    return run + model.penalty_value(penalty, rho_v[-1], target, grid.dx)


def smoothing_preconditioner(M, dx, length):
    """``v -> (I - length^2 D2)^{-1} v`` with zero-flux ends; identity for length 0."""
    if length <= 0:
        return lambda v: v.copy()
    c = (length / dx) ** 2
    lower = np.full(M, -c)
    upper = np.full(M, -c)
    diag = np.full(M, 1.0 + 2.0 * c)
    diag[0] = diag[-1] = 1.0 + c
    return lambda v: solve_tridiagonal(lower, diag, upper, v)


class _LBFGS:
    """Two-loop recursion over the last ``m`` curvature pairs, initial matrix ``gamma * H0``."""

    def __init__(self, m, H0):
        self.m = m
        self.H0 = H0
        self.s = []
        self.y = []

    def reset(self):
        self.s.clear()
        self.y.clear()

    def push(self, s, y):
        sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.s.append(s)
        self.y.append(y)
        if len(self.s) > self.m:
            self.s.pop(0)
            self.y.pop(0)
        return True

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(self.s), reversed(self.y)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            alphas.append((a, rho))
            q -= a * y
        if self.s:
            s, y = self.s[-1], self.y[-1]
            q = self.H0(q) * ((s @ y) / (y @ self.H0(y)))
        for (s, y), (a, rho) in zip(zip(self.s, self.y), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        return -q


def _steepest(g, H0, radius=1.0):
    d = H0(g)
    dmax = np.max(np.abs(d))
    return -d * (radius / dmax) if dmax > 0 else -d


def optimize(problem: Problem, phi1_init=None, callback=None) -> SolveReport:
    """Minimize ``V~`` over ``phi1`` by L-BFGS with Armijo backtracking."""
    tol = problem.tol
    grid = problem.grid
    rho0 = problem.rho0
    phi = np.zeros(grid.M) if phi1_init is None else np.array(phi1_init, dtype=float)
    ev = evaluate_dual(phi, problem, rho0)
    H0 = smoothing_preconditioner(grid.M, grid.dx, tol.precond_length)
    lbfgs = _LBFGS(tol.memory, H0)
    log_rows = []
    reason = "max_iterations"
    fallback_used = False
    t_start = time.perf_counter()
    for k in range(tol.max_outer_iter):
        g = ev.gradient
        gnorm = float(np.max(np.abs(g)))
        if not np.isfinite(ev.V_tilde) or not np.all(np.isfinite(g)):
            reason = "non_finite"
            break
        if gnorm <= tol.grad_tol:
            reason = "converged"
            log_rows.append(_log_row(k, ev, gnorm, 0.0))
            break
        d = lbfgs.direction(g) if lbfgs.s else _steepest(g, H0)
        slope = float(g @ d)
        if slope >= 0:
            lbfgs.reset()
            d = _steepest(g, H0)
            slope = float(g @ d)
        step, trial = _armijo(phi, ev, d, slope, problem, rho0)
        if trial is None:
            if fallback_used and not lbfgs.s:
                reason = "line_search_failure"
                log_rows.append(_log_row(k, ev, gnorm, 0.0))
                break
            # one plain gradient retry with fresh memory
            lbfgs.reset()
            fallback_used = True
            d = _steepest(g, H0)
            step, trial = _armijo(phi, ev, d, float(g @ d), problem, rho0)
            if trial is None:
                reason = "line_search_failure"
                log_rows.append(_log_row(k, ev, gnorm, 0.0))
                break
        else:
            fallback_used = False
        log_rows.append(_log_row(k, ev, gnorm, step))
        new_phi = phi + step * d
        lbfgs.push(new_phi - phi, trial.gradient - g)
        phi, ev = new_phi, trial
        if callback is not None:
            callback(k, phi, ev)
    elapsed = time.perf_counter() - t_start
    log.info("outer loop stopped after %d iterations (%s)", len(log_rows), reason)
    return build_report(phi, ev, problem, rho0, log_rows, reason, elapsed)


def _log_row(k, ev, gnorm, step):
    return {
        "iter": k,
        "V_tilde": ev.V_tilde,
        "grad_inf_norm": gnorm,
        "step": step,
        "fp_iterations": int(ev.fp_iterations.sum()),
    }


def _armijo(phi, ev, d, slope, problem, rho0):
    tol = problem.tol
    step = 1.0
    for _ in range(tol.max_backtracks):
        try:
            trial = evaluate_dual(phi + step * d, problem, rho0)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            log.debug("trial step %.3g failed: %s", step, exc)
            trial = None
        # an unconverged HJB fixed point makes V~ and its gradient inconsistent
        if trial is not None and trial.unconverged_steps and not ev.unconverged_steps:
            log.debug("trial step %.3g rejected: %d unconverged HJB steps", step, len(trial.unconverged_steps))
            trial = None
        if (
            trial is not None
            and np.isfinite(trial.V_tilde)
            and trial.V_tilde <= ev.V_tilde + tol.armijo_c1 * step * slope
        ):
            return step, trial
        step *= 0.5
    return 0.0, None


def build_report(phi, ev: DualEvaluation, problem: Problem, rho0, log_rows, reason, elapsed=0.0):
    grid = problem.grid
    kw = dict(scheme=problem.fp_scheme, cfl_safety=problem.cfl_safety, stencil=problem.stencil)
    p_traj = wealth_with_saving_trajectory(rho0, ev.controls, problem.market, grid, **kw)
    q_traj = without_cash_input_trajectory(rho0, ev.controls, problem.market, grid, **kw)
    cash = cash_diagnostics(ev.controls, ev.rho, problem.market, grid)
    primal = primal_cost(
        ev.rho, ev.controls, problem.cost, problem.penalty, problem.target, problem.market, grid
    )
    gap = primal + ev.V_tilde
    box = problem.cost.box
    on_box = (
        (np.abs(ev.controls.A - box.A_max) < 1e-9)
        | (np.abs(ev.controls.B - box.B_max) < 1e-9)
        | (np.abs(ev.controls.B - box.B_min) < 1e-9)
    )
    w = ev.rho.values[:-1]
    nu = problem.market.nu_levels(grid)
    feasible = all(
        np.all(admissible(ev.controls.B[n], ev.controls.A[n], nu[n], problem.cost.at(n * grid.dt), 1e-9))
        for n in range(grid.N)
    )
    diagnostics = {
        "mass_drift": max(ev.rho.mass_drift(grid.dx), p_traj.mass_drift(grid.dx), q_traj.mass_drift(grid.dx)),
        "min_density": min(ev.rho.min_density, p_traj.min_density, q_traj.min_density),
        "box_active_mass": float(np.sum(on_box * w) * grid.dx * grid.dt),
        "controls_admissible": bool(feasible),
        "fp_unconverged_steps": len(ev.unconverged_steps),
        "fp_iterations_median": float(np.median(ev.fp_iterations)),
        "max_substeps": int(max(ev.rho.substeps.max(), p_traj.substeps.max(), q_traj.substeps.max())),
        "kl_clamped": ev.kl_clamped,
        "weak_duality_holds": bool(gap >= -problem.tol.gap_tol),
        "elapsed_seconds": elapsed,
        "fp_scheme": problem.fp_scheme,
        "stencil": problem.stencil,
    }
    if not diagnostics["weak_duality_holds"]:
        log.warning("duality gap %.3e below -gap_tol; the iterate is far from optimal", gap)
    if diagnostics["min_density"] < -1e-10:
        log.warning("negative density %.3e in reported trajectories", diagnostics["min_density"])
    return SolveReport(
        phi1_opt=phi,
        V_tilde=ev.V_tilde,
        dual_value=-ev.V_tilde,
        primal_cost=primal,
        duality_gap=gap,
        penalty_value=model.penalty_value(problem.penalty, ev.rho1, problem.target, grid.dx),
        rho_trajectory=ev.rho,
        p_trajectory=p_traj,
        q_trajectory=q_traj,
        controls=ev.controls,
        potential=ev.phi,
        cash=cash,
        iterations=log_rows,
        termination_reason=reason,
        target=problem.target,
        grid=grid,
        diagnostics=diagnostics,
    )
