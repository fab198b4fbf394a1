import numpy as np
import pytest

from densteer import hjb, model
from densteer.hamiltonian import admissible, maximize_hamiltonian
from densteer.numerics import generator_bands, make_grid

WIDE = model.ControlBox(6.0, -3.0, 3.0)


@pytest.fixture
def grid():
    return make_grid(0, 12, 61, 20)


def _dense(lower, diag, upper):
    return np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)


def test_zero_terminal_is_fixed_point(grid, market):
    sol = hjb.solve_hjb(np.zeros(grid.M), model.QuadraticShift(), market, grid)
    np.testing.assert_allclose(sol.potential.values, 0.0, atol=1e-14)
    np.testing.assert_allclose(sol.controls.B, 0.2)
    np.testing.assert_allclose(sol.controls.A, 0.2)
    assert sol.unconverged_steps == []


@pytest.mark.parametrize("stencil", ["upwind", "central"])
def test_step_satisfies_discrete_equation(grid, market, stencil, rng):
    cost = model.QuadraticShift(box=WIDE)
    phi_next = 0.3 * np.sin(grid.x) + 0.1 * grid.x + rng.normal(0, 0.01, grid.M)
    res = hjb.hjb_backward_step(phi_next, cost, 1.0, grid, stencil=stencil)
    assert res.converged
    lo, di, up = generator_bands(res.B, res.A, grid.dx, stencil)
    lhs = (np.eye(grid.M) - grid.dt * _dense(lo, di, up)) @ res.phi
    np.testing.assert_allclose(lhs, phi_next - grid.dt * cost.value(res.B, res.A, 1.0), atol=1e-12)


def test_controls_are_hamiltonian_maximizers(grid, market, rng):
    cost = model.QuadraticShift(box=WIDE)
    phi1 = 0.2 * np.cos(grid.x / 2)
    res = hjb.hjb_backward_step(phi1, cost, 1.0, grid, fp_tol=1e-12)
    B, A = hjb.optimal_controls(res.phi, cost, 1.0, grid.dx)
    np.testing.assert_allclose(B, res.B, atol=1e-6)
    np.testing.assert_allclose(A, res.A, atol=1e-6)


def test_central_controls_match_direct_maximization(grid):
    cost = model.QuadraticShift()
    phi = 0.05 * (grid.x - 6) ** 2
    B, A = hjb.optimal_controls(phi, cost, 1.0, grid.dx, stencil="central")
    p = np.gradient(phi, grid.dx)
    q = np.zeros(grid.M)
    q[1:-1] = 0.5 * (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / grid.dx**2
    Bd, Ad, _ = maximize_hamiltonian(p, q, 1.0, cost)
    np.testing.assert_allclose(B[1:-1], Bd[1:-1], atol=1e-12)
    np.testing.assert_allclose(A[1:-1], Ad[1:-1], atol=1e-12)


def test_constant_shift(grid, market, rng):
    cost = model.QuadraticShift(box=WIDE)
    phi1 = rng.normal(0, 0.3, grid.M)
    a = hjb.solve_hjb(phi1, cost, market, grid).potential.phi0
    b = hjb.solve_hjb(phi1 + 2.5, cost, market, grid).potential.phi0
    np.testing.assert_allclose(b - a, 2.5, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_comparison_principle(grid, market, seed):
    r = np.random.default_rng(seed)
    cost = model.QuadraticShift(box=WIDE)
    phi1 = r.normal(0, 0.5, grid.M)
    psi1 = phi1 + np.abs(r.normal(0, 0.5, grid.M))
    a = hjb.solve_hjb(phi1, cost, market, grid, fp_tol=1e-11).potential.values
    b = hjb.solve_hjb(psi1, cost, market, grid, fp_tol=1e-11).potential.values
    assert np.all(b >= a - 1e-8)


def test_controls_admissible(grid, market, rng):
    cost = model.QuadraticShift()
    sol = hjb.solve_hjb(rng.normal(0, 1, grid.M), cost, market, grid)
    assert admissible(sol.controls.B, sol.controls.A, 1.0, cost, tol=1e-9).all()


def test_time_varying_cost_resolved_per_step(grid, market):
    sched = model.KSchedule(((0.0, 0.5, 5.0), (0.5, 1.0, 0.1)))
    cost = model.CashInputPiecewise(sched, w=0.01, l=0.01)
    phi1 = 0.3 * grid.x
    sol = hjb.solve_hjb(phi1, cost, market, grid)
    early = hjb.hjb_backward_step(sol.potential.values[1], cost.at(0.0), 1.0, grid)
    late = hjb.hjb_backward_step(phi1, cost.at(0.95), 1.0, grid)
    np.testing.assert_allclose(sol.potential.values[0], early.phi, atol=1e-12)
    np.testing.assert_allclose(sol.potential.values[-2], late.phi, atol=1e-12)


def test_nonconvergence_reported(grid, market, rng):
    sol = hjb.solve_hjb(rng.normal(0, 1, grid.M), model.QuadraticShift(box=WIDE), market, grid, fp_max_iter=1)
    assert len(sol.unconverged_steps) == grid.N
    assert np.all(sol.iterations == 1)


def test_empty_box_raises_with_step(grid):
    market = model.MarketParams(0.0, 0.1)
    cost = model.QuadraticShift(box=model.ControlBox(1.0, 0.5, 1.0))
    with pytest.raises(hjb.HJBError) as info:
        hjb.solve_hjb(np.zeros(grid.M), cost, market, grid)
    assert info.value.time_index == grid.N - 1


@pytest.mark.parametrize("bad", [np.zeros(5), np.full(61, np.nan)])
def test_rejects_bad_terminal(grid, market, bad):
    with pytest.raises(ValueError):
        hjb.solve_hjb(bad, model.QuadraticShift(), market, grid)


def test_unknown_stencil(grid):
    with pytest.raises(ValueError):
        hjb.optimal_controls(np.zeros(grid.M), model.QuadraticShift(), 1.0, grid.dx, stencil="weno")
