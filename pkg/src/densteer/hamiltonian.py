"""Pointwise maximization of ``p B + q A - F(B, A)`` over admissible controls.

``p`` is the first spatial derivative of the potential and ``q`` half its
second derivative. Everything here is vectorized over grid nodes: ``p`` and
``q`` are arrays, ``nu_norm`` and the cost parameters are scalars for the
current time level.

The maximizer is found by exhaustive candidate enumeration: every smooth
piece of the admissible set's boundary (and of the cost's region partition)
contributes its exact one-dimensional maximizers, and the best feasible
candidate wins. The public maximizers run a compiled per-node loop
(:mod:`._kernels`); ``reference_maximize`` is the same enumeration in
vectorized numpy, kept for cross-checks.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import _kernels
from .model import CashInputPiecewise, ControlBox, QuadraticShift

TIE_TOL = 1e-12
FEAS_TOL = 1e-12
# below this the cone is numerically the half-plane B <= 0 and nu**4 underflows
NU_FLOOR = 1e-10


class EmptyControlSetError(ValueError):
    pass


def depressed_cubic_roots(c3, c1, c0):
    """Real roots of ``c3 t^3 + c1 t + c0 = 0``, elementwise.

    Returns an array of shape ``(3,) + shape`` padded with NaN where fewer
    than three real roots exist. Closed form (Cardano / trigonometric)
    followed by Newton polishing; bisection on the bracket is used when
    the closed form is not finite.
    """
    c3, c1, c0 = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (c3, c1, c0)))
    P = c1 / c3
    Q = c0 / c3
    roots = np.full((3,) + P.shape, np.nan)
    disc = (Q / 2.0) ** 2 + (P / 3.0) ** 3
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        one = disc >= 0
        sq = np.sqrt(np.where(one, disc, 0.0))
        # pick the sign that avoids cancellation
        u = np.cbrt(-Q / 2.0 - np.copysign(sq, Q))
        v = np.where(u != 0.0, -P / (3.0 * u), 0.0)
        roots[0] = np.where(one, u + v, np.nan)

        three = ~one
        r = 2.0 * np.sqrt(np.where(three, -P / 3.0, 1.0))
        arg = np.where(three, 3.0 * Q / (P * r), 0.0)
        theta = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
        for k in range(3):
            rk = r * np.cos(theta - 2.0 * np.pi * k / 3.0)
            roots[k] = np.where(three, rk, roots[k])

        for _ in range(3):
            f = (roots**2 + P) * roots + Q
            fp = 3.0 * roots**2 + P
            step = np.where(fp != 0.0, f / fp, 0.0)
            roots = np.where(np.isfinite(step), roots - step, roots)

    bad = ~np.all(np.isfinite(roots[0]) | ~one)
    if bad:
        idx = one & ~np.isfinite(roots[0])
        roots[0][idx] = _bisect_single_root(c3[idx], c1[idx], c0[idx])
    return roots


def _bisect_single_root(c3, c1, c0, iters=200):
    # a cubic with one real root: bracket it by the Cauchy bound
    bound = 1.0 + np.maximum(np.abs(c1 / c3), np.abs(c0 / c3))
    lo, hi = -bound, bound
    f = lambda t: (c3 * t * t + c1) * t + c0  # noqa: E731
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _clip_or_nan(value, lo, hi):
    if np.isscalar(lo) and np.isscalar(hi):
        value = np.asarray(value, dtype=float)
        return np.clip(value, lo, hi) if lo <= hi else np.full(value.shape, np.nan)
    value, lo, hi = np.broadcast_arrays(value, lo, hi)
    with np.errstate(invalid="ignore"):
        return np.where(lo <= hi, np.clip(value, lo, hi), np.nan)


def _curve_candidates(c3, c1, c0, lo, hi, shape):
    """Maximizers of a quartic along ``B in [lo, hi]``: cubic roots and ends."""
    out = []
    if lo > hi:
        return out
    roots = depressed_cubic_roots(np.full(shape, c3), c1, c0)
    for r in roots:
        out.append(np.where(np.isfinite(r), np.clip(r, lo, hi), np.nan))
    out.append(np.full(shape, lo))
    out.append(np.full(shape, hi))
    return out


def _quadratic_shift_candidates(p, q, nu, cost: QuadraticShift):
    a, b = cost.a_center, cost.b_center
    box = cost.box
    Amax, Bmin, Bmax = box.A_max, box.B_min, box.B_max
    shape = p.shape
    full = lambda v: np.full(shape, float(v))  # noqa: E731
    Bs = b + 0.5 * p
    As = a + 0.5 * q
    cands = [(Bs, As)]
    # stationary point restricted to the box (covers the B <= 0 half-plane)
    cands.append((np.clip(Bs, Bmin, min(Bmax, 0.0)) if Bmin <= 0 else full(np.nan),
                  np.clip(As, 0.0, Amax)))
    if nu > 0:
        b_top = nu * np.sqrt(Amax)
        cands.append((_clip_or_nan(Bs, Bmin, min(0.0, Bmax)), full(0.0)))
        cands.append((_clip_or_nan(Bs, Bmin, min(Bmax, b_top)), full(Amax)))
        for c in (Bmin, Bmax):
            lo = max(c, 0.0) ** 2 / nu**2
            cands.append((full(c), _clip_or_nan(As, lo, Amax)))
        lo, hi = max(0.0, Bmin), min(Bmax, b_top)
        c3 = -4.0 / nu**4
        c1 = (2.0 * q + 4.0 * a) / nu**2 - 2.0
        c0 = p + 2.0 * b
        for Bc in _curve_candidates(c3, c1, c0, lo, hi, shape):
            cands.append((Bc, Bc**2 / nu**2))
    else:
        # the cone degenerates to the half-plane B <= 0
        hi = min(0.0, Bmax)
        cands.append((_clip_or_nan(Bs, Bmin, hi), full(0.0)))
        cands.append((_clip_or_nan(Bs, Bmin, hi), full(Amax)))
        if Bmin <= 0:
            cands.append((full(Bmin), np.clip(As, 0.0, Amax)))
            cands.append((full(hi), np.clip(As, 0.0, Amax)))
    return cands


def _cash_input_candidates(p, q, nu, cost: CashInputPiecewise):
    K, w, l = cost.K, cost.w, cost.l
    box = cost.box
    Amax, Bmin, Bmax = box.A_max, box.B_min, box.B_max
    shape = p.shape
    full = lambda v: np.full(shape, float(v))  # noqa: E731
    B1, A1 = p / (2.0 * K), (q + K * nu**2) / (2.0 * w)
    B3, A2 = p / (2.0 * l), q / (2.0 * w)
    cands = [(B1, A1), (B3, A2)]
    for Bc in (Bmin, Bmax):
        for Ac in (0.0, Amax):
            cands.append((full(Bc), full(Ac)))
    if Bmin <= 0.0 <= Bmax:
        cands.append((full(0.0), np.clip(A2, 0.0, Amax)))
    # edges A = const: pieces split at B = 0 and the frontier B = nu sqrt(A)
    for Ac in (0.0, Amax):
        s = nu * np.sqrt(Ac)
        cands.append((_clip_or_nan(B3, Bmin, min(0.0, Bmax)), full(Ac)))
        lo2, hi2 = max(0.0, Bmin), min(s, Bmax)
        if lo2 <= hi2:
            cands.append((full(lo2), full(Ac)))
            cands.append((full(hi2), full(Ac)))
        cands.append((_clip_or_nan(B1, max(s, Bmin), Bmax), full(Ac)))
    # edges B = const: split at A = B^2 / nu^2
    for Bc in (Bmin, Bmax):
        if Bc <= 0.0 or nu == 0.0:
            cands.append((full(Bc), np.clip(A2, 0.0, Amax)))
            if Bc > 0.0:
                cands.append((full(Bc), np.clip(A1, 0.0, Amax)))
            continue
        ab = Bc**2 / nu**2
        cands.append((full(Bc), _clip_or_nan(A1, 0.0, min(ab, Amax))))
        cands.append((full(Bc), _clip_or_nan(A2, ab, Amax)))
    if nu > 0:
        lo, hi = max(0.0, Bmin), min(Bmax, nu * np.sqrt(Amax))
        c3 = -4.0 * w / nu**4
        for Bc in _curve_candidates(c3, 2.0 * q / nu**2, p, lo, hi, shape):
            cands.append((Bc, Bc**2 / nu**2))
    return cands


def admissible(B, A, nu_norm, cost, tol: float = FEAS_TOL):
    """Box membership, plus the self-financing cone for :class:`QuadraticShift`."""
    box = cost.box
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    with np.errstate(invalid="ignore"):
        ok = (A >= -tol) & (A <= box.A_max + tol) & (B >= box.B_min - tol) & (B <= box.B_max + tol)
        if isinstance(cost, QuadraticShift):
            ok &= np.maximum(B, 0.0) ** 2 <= nu_norm**2 * A + tol * (1.0 + np.abs(A))
    return ok & np.isfinite(B) & np.isfinite(A)


def objective(p, q, B, A, nu_norm, cost):
    """``p B + q A - F(B, A)``."""
    return p * B + q * A - cost.value(B, A, nu_norm)


def reference_maximize(p, q, nu_norm, cost):
    """Vectorized numpy version of :func:`maximize_hamiltonian`."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    p, q = np.broadcast_arrays(p, q)
    nu_norm = _nu(nu_norm)
    if isinstance(cost, QuadraticShift):
        cands = _quadratic_shift_candidates(p, q, nu_norm, cost)
    elif isinstance(cost, CashInputPiecewise):
        if cost.K is None:
            cost = cost.at(0.0)
        cands = _cash_input_candidates(p, q, nu_norm, cost)
    else:
        raise TypeError(f"unknown cost {cost!r}")

    Bc = np.empty((len(cands),) + p.shape)
    Ac = np.empty_like(Bc)
    for k, (b, a) in enumerate(cands):
        Bc[k] = b
        Ac[k] = a
    ok = admissible(Bc, Ac, nu_norm, cost)
    with np.errstate(invalid="ignore", over="ignore"):
        vals = np.where(ok, objective(p, q, Bc, Ac, nu_norm, cost), -np.inf)
    best = vals.max(axis=0)
    if not np.all(np.isfinite(best)):
        raise EmptyControlSetError("no admissible control candidate; check the control box")
    tie = vals >= best - TIE_TOL
    a_key = np.where(tie, Ac, np.inf)
    tie &= Ac <= a_key.min(axis=0) + 1e-15
    idx = np.argmin(np.where(tie, np.abs(Bc), np.inf), axis=0)
    cols = np.arange(p.size).reshape(p.shape)
    B_star = Bc.reshape(len(cands), -1)[idx.ravel(), cols.ravel()].reshape(p.shape)
    A_star = Ac.reshape(len(cands), -1)[idx.ravel(), cols.ravel()].reshape(p.shape)
    value = objective(p, q, B_star, A_star, nu_norm, cost)
    return B_star, A_star, value


def _half_box(cost, sign):
    """``cost`` with its box cut to ``B >= 0`` (sign > 0) or ``B <= 0``; None if empty."""
    box = cost.box
    lo, hi = (max(box.B_min, 0.0), box.B_max) if sign > 0 else (box.B_min, min(box.B_max, 0.0))
    if not lo < hi:
        return None
    return dataclasses.replace(cost, box=ControlBox(box.A_max, lo, hi))


def reference_maximize_upwind(p_fwd, p_bwd, q, nu_norm, cost):
    """Vectorized numpy version of :func:`maximize_hamiltonian_upwind`."""
    if isinstance(cost, CashInputPiecewise) and cost.K is None:
        cost = cost.at(0.0)
    halves = []
    for sign, p in ((1, p_fwd), (-1, p_bwd)):
        sub = _half_box(cost, sign)
        if sub is not None:
            halves.append(reference_maximize(p, q, nu_norm, sub))
    if len(halves) == 1:
        return halves[0]
    (Bp, Ap, vp), (Bn, An, vn) = halves
    tie = np.abs(vp - vn) <= TIE_TOL
    pick_pos = np.where(tie, (Ap < An) | ((Ap == An) & (np.abs(Bp) <= np.abs(Bn))), vp > vn)
    return (np.where(pick_pos, Bp, Bn), np.where(pick_pos, Ap, An), np.where(pick_pos, vp, vn))


def _nu(nu_norm):
    if nu_norm < 0:
        raise ValueError("nu_norm must be nonnegative")
    return 0.0 if nu_norm < NU_FLOOR else float(nu_norm)


def _kernel_args(cost):
    if isinstance(cost, QuadraticShift):
        head = (0, cost.a_center, cost.b_center, 0.0)
    elif isinstance(cost, CashInputPiecewise):
        if cost.K is None:
            cost = cost.at(0.0)
        head = (1, float(cost.K), cost.w, cost.l)
    else:
        raise TypeError(f"unknown cost {cost!r}")
    box = cost.box
    return head, (float(box.A_max), float(box.B_min), float(box.B_max))


def _flat(*arrays):
    arrays = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, dtype=float)) for a in arrays))
    return arrays[0].shape, [np.ascontiguousarray(a).ravel() for a in arrays]


def _finish(shape, B, A, V):
    if not np.all(np.isfinite(V)):
        raise EmptyControlSetError("no admissible control candidate; check the control box")
    return B.reshape(shape), A.reshape(shape), V.reshape(shape)


def maximize_hamiltonian(p, q, nu_norm, cost):
    """Return ``(B_star, A_star, value)`` maximizing ``p B + q A - F``.

    ``cost`` must be resolved at the current time (``cost.at(t)``) so that a
    time-varying ``K`` is a scalar.
    """
    nu_norm = _nu(nu_norm)
    (kind, c0, c1, c2), box = _kernel_args(cost)
    shape, (p, q) = _flat(p, q)
    return _finish(shape, *_kernels.maximize(kind, p, q, float(nu_norm), c0, c1, c2, *box))


def maximize_hamiltonian_upwind(p_fwd, p_bwd, q, nu_norm, cost):
    """Maximize ``B^+ p_fwd - B^- p_bwd + q A - F`` (drift term differenced upwind).

    The objective is ``p_fwd B + ...`` on ``B >= 0`` and ``p_bwd B + ...`` on
    ``B <= 0``; each half is an ordinary Hamiltonian on a halved box, and the
    better half wins (ties: smaller ``A``, then smaller ``|B|``).
    """
    nu_norm = _nu(nu_norm)
    (kind, c0, c1, c2), box = _kernel_args(cost)
    shape, (pf, pb, q) = _flat(p_fwd, p_bwd, q)
    out = _kernels.maximize_upwind(kind, pf, pb, q, float(nu_norm), c0, c1, c2, *box)
    return _finish(shape, *out)


def conjugate_F(p, q, nu_norm, cost):
    """Convex conjugate ``F*(p, q)``, the Hamiltonian's supremum."""
    return maximize_hamiltonian(p, q, nu_norm, cost)[2]


def brute_force_maximize(p, q, nu_norm, cost, step=1e-3, min_step=1e-12):
    """Grid search over the control box followed by a shrinking pattern search.

    Scalar ``p``, ``q``. Slow; meant as an independent test oracle. The
    pattern search alternates between ``(B, A)`` coordinates and
    ``(B, nu^2 A - B^2)`` coordinates, in which the frontier is axis-aligned,
    and only shrinks once neither moves the best point.
    """
    box = cost.box
    if isinstance(cost, CashInputPiecewise) and cost.K is None:
        cost = cost.at(0.0)
    B = np.arange(box.B_min, box.B_max + step / 2, step)
    A = np.arange(0.0, box.A_max + step / 2, step)
    BB, AA = np.meshgrid(B, A, indexing="ij")

    def score(BB, AA):
        ok = admissible(BB, AA, nu_norm, cost, tol=0.0)
        with np.errstate(invalid="ignore"):
            vals = np.where(ok, objective(p, q, BB, AA, nu_norm, cost), -np.inf)
        k = np.unravel_index(np.argmax(vals), vals.shape)
        return BB[k], AA[k], vals[k]

    b0, a0, best = score(BB, AA)
    nu2 = nu_norm**2
    offsets = np.linspace(-4.0, 4.0, 17)
    h = step
    while h > min_step:
        moved = False
        Bz, Az = np.meshgrid(b0 + h * offsets, a0 + h * offsets, indexing="ij")
        trials = [(Bz, Az)]
        if nu2 > 0:
            u0 = nu2 * a0 - b0**2
            Bz, Uz = np.meshgrid(b0 + h * offsets, u0 + h * offsets, indexing="ij")
            trials.append((Bz, (Uz + Bz**2) / nu2))
        for BB, AA in trials:
            b, a, v = score(BB, AA)
            if v > best:
                b0, a0, best, moved = b, a, v, True
        if not moved:
            h /= 2.0
    return b0, a0, best
