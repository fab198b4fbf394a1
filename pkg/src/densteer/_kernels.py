"""Compiled per-node Hamiltonian maximizers.

Scalar transcriptions of the candidate enumeration in :mod:`hamiltonian`
(which remains the vectorized reference). Each node keeps a running best:
a candidate replaces it if its value is larger by more than ``TIE``, or if
it ties and has smaller ``A`` (then smaller ``|B|``).
"""

import math

import numpy as np
from numba import njit

TIE = 1e-12
FEAS = 1e-12
INF = np.inf


@njit(cache=True)
def _cubic_roots(c3, c1, c0, out):
    """Real roots of ``c3 t^3 + c1 t + c0`` into ``out``; returns their count."""
    P = c1 / c3
    Q = c0 / c3
    disc = (Q / 2.0) ** 2 + (P / 3.0) ** 3
    n = 0
    if disc >= 0.0:
        sq = math.sqrt(disc)
        u = np.cbrt(-Q / 2.0 - math.copysign(sq, Q))
        v = -P / (3.0 * u) if u != 0.0 else 0.0
        out[0] = u + v
        n = 1
    else:
        r = 2.0 * math.sqrt(-P / 3.0)
        arg = min(1.0, max(-1.0, 3.0 * Q / (P * r)))
        theta = math.acos(arg) / 3.0
        for k in range(3):
            out[k] = r * math.cos(theta - 2.0 * math.pi * k / 3.0)
        n = 3
    for k in range(n):
        t = out[k]
        for _ in range(3):
            f = (t * t + P) * t + Q
            fp = 3.0 * t * t + P
            if fp != 0.0:
                s = f / fp
                if math.isfinite(s):
                    t -= s
        out[k] = t
    if n == 1 and not math.isfinite(out[0]):
        bound = 1.0 + max(abs(c1 / c3), abs(c0 / c3))
        lo, hi = -bound, bound
        flo = (c3 * lo * lo + c1) * lo + c0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = (c3 * mid * mid + c1) * mid + c0
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        out[0] = 0.5 * (lo + hi)
    return n


@njit(cache=True)
def _clip(v, lo, hi):
    return min(max(v, lo), hi)


@njit(cache=True)
def _qs_value(p, q, B, A, a, b):
    return p * B + q * A - (A - a) ** 2 - (B - b) ** 2


@njit(cache=True)
def _cash_value(p, q, B, A, nu, K, w, l):
    if B > nu * math.sqrt(max(A, 0.0)):
        extra = K * (B * B - nu * nu * A)
    elif B < 0.0:
        extra = l * B * B
    else:
        extra = 0.0
    return p * B + q * A - extra - w * A * A


@njit(cache=True)
def _admissible(B, A, nu, Amax, Bmin, Bmax, cone):
    if not (math.isfinite(B) and math.isfinite(A)):
        return False
    if A < -FEAS or A > Amax + FEAS or B < Bmin - FEAS or B > Bmax + FEAS:
        return False
    if cone and max(B, 0.0) ** 2 > nu * nu * A + FEAS * (1.0 + abs(A)):
        return False
    return True


@njit(cache=True)
def _better(val, A, B, bval, bA, bB):
    if val > bval + TIE:
        return True
    if val >= bval - TIE:
        return A < bA or (A == bA and abs(B) < abs(bB))
    return False


@njit(cache=True)
def _qs_node(p, q, nu, a, b, Amax, Bmin, Bmax):
    best = (-INF, INF, INF)  # value, A, B
    roots = np.empty(3)
    Bs = b + 0.5 * p
    As = a + 0.5 * q
    nB = 0
    cB = np.empty(24)
    cA = np.empty(24)
    cB[nB], cA[nB] = Bs, As
    nB += 1
    if Bmin <= 0.0:
        cB[nB], cA[nB] = _clip(Bs, Bmin, min(Bmax, 0.0)), _clip(As, 0.0, Amax)
        nB += 1
    if nu > 0.0:
        b_top = nu * math.sqrt(Amax)
        if Bmin <= min(0.0, Bmax):
            cB[nB], cA[nB] = _clip(Bs, Bmin, min(0.0, Bmax)), 0.0
            nB += 1
        if Bmin <= min(Bmax, b_top):
            cB[nB], cA[nB] = _clip(Bs, Bmin, min(Bmax, b_top)), Amax
            nB += 1
        for c in (Bmin, Bmax):
            lo = max(c, 0.0) ** 2 / nu**2
            if lo <= Amax:
                cB[nB], cA[nB] = c, _clip(As, lo, Amax)
                nB += 1
        lo, hi = max(0.0, Bmin), min(Bmax, b_top)
        if lo <= hi:
            nr = _cubic_roots(-4.0 / nu**4, (2.0 * q + 4.0 * a) / nu**2 - 2.0, p + 2.0 * b, roots)
            for k in range(nr):
                if math.isfinite(roots[k]):
                    r = _clip(roots[k], lo, hi)
                    cB[nB], cA[nB] = r, r * r / nu**2
                    nB += 1
            cB[nB], cA[nB] = lo, lo * lo / nu**2
            nB += 1
            cB[nB], cA[nB] = hi, hi * hi / nu**2
            nB += 1
    else:
        hi = min(0.0, Bmax)
        if Bmin <= hi:
            cB[nB], cA[nB] = _clip(Bs, Bmin, hi), 0.0
            nB += 1
            cB[nB], cA[nB] = _clip(Bs, Bmin, hi), Amax
            nB += 1
            cB[nB], cA[nB] = Bmin, _clip(As, 0.0, Amax)
            nB += 1
            cB[nB], cA[nB] = hi, _clip(As, 0.0, Amax)
            nB += 1
    for k in range(nB):
        B, A = cB[k], cA[k]
        if _admissible(B, A, nu, Amax, Bmin, Bmax, True):
            val = _qs_value(p, q, B, A, a, b)
            if _better(val, A, B, best[0], best[1], best[2]):
                best = (val, A, B)
    return best


@njit(cache=True)
def _cash_node(p, q, nu, K, w, l, Amax, Bmin, Bmax):
    best = (-INF, INF, INF)
    roots = np.empty(3)
    cB = np.empty(40)
    cA = np.empty(40)
    n = 0
    B1, A1 = p / (2.0 * K), (q + K * nu**2) / (2.0 * w)
    B3, A2 = p / (2.0 * l), q / (2.0 * w)
    cB[n], cA[n] = B1, A1
    n += 1
    cB[n], cA[n] = B3, A2
    n += 1
    for Bc in (Bmin, Bmax):
        for Ac in (0.0, Amax):
            cB[n], cA[n] = Bc, Ac
            n += 1
    if Bmin <= 0.0 <= Bmax:
        cB[n], cA[n] = 0.0, _clip(A2, 0.0, Amax)
        n += 1
    for Ac in (0.0, Amax):
        s = nu * math.sqrt(Ac)
        if Bmin <= min(0.0, Bmax):
            cB[n], cA[n] = _clip(B3, Bmin, min(0.0, Bmax)), Ac
            n += 1
        lo2, hi2 = max(0.0, Bmin), min(s, Bmax)
        if lo2 <= hi2:
            cB[n], cA[n] = lo2, Ac
            n += 1
            cB[n], cA[n] = hi2, Ac
            n += 1
        if max(s, Bmin) <= Bmax:
            cB[n], cA[n] = _clip(B1, max(s, Bmin), Bmax), Ac
            n += 1
    for Bc in (Bmin, Bmax):
        if Bc <= 0.0 or nu == 0.0:
            cB[n], cA[n] = Bc, _clip(A2, 0.0, Amax)
            n += 1
            if Bc > 0.0:
                cB[n], cA[n] = Bc, _clip(A1, 0.0, Amax)
                n += 1
            continue
        ab = Bc * Bc / nu**2
        if 0.0 <= min(ab, Amax):
            cB[n], cA[n] = Bc, _clip(A1, 0.0, min(ab, Amax))
            n += 1
        if ab <= Amax:
            cB[n], cA[n] = Bc, _clip(A2, ab, Amax)
            n += 1
    if nu > 0.0:
        lo, hi = max(0.0, Bmin), min(Bmax, nu * math.sqrt(Amax))
        if lo <= hi:
            nr = _cubic_roots(-4.0 * w / nu**4, 2.0 * q / nu**2, p, roots)
            for k in range(nr):
                if math.isfinite(roots[k]):
                    r = _clip(roots[k], lo, hi)
                    cB[n], cA[n] = r, r * r / nu**2
                    n += 1
            cB[n], cA[n] = lo, lo * lo / nu**2
            n += 1
            cB[n], cA[n] = hi, hi * hi / nu**2
            n += 1
    for k in range(n):
        B, A = cB[k], cA[k]
        if _admissible(B, A, nu, Amax, Bmin, Bmax, False):
            val = _cash_value(p, q, B, A, nu, K, w, l)
            if _better(val, A, B, best[0], best[1], best[2]):
                best = (val, A, B)
    return best


@njit(cache=True)
def _node(kind, p, q, nu, c0, c1, c2, Amax, Bmin, Bmax):
    if kind == 0:
        return _qs_node(p, q, nu, c0, c1, Amax, Bmin, Bmax)
    return _cash_node(p, q, nu, c0, c1, c2, Amax, Bmin, Bmax)


@njit(cache=True)
def maximize(kind, p, q, nu, c0, c1, c2, Amax, Bmin, Bmax):
    """Full-box maximizer over flat arrays ``p``, ``q``.

    ``kind`` 0 is the quadratic shift (``c0, c1`` = centers of ``A``, ``B``),
    1 the cash-input cost (``c0, c1, c2`` = ``K, w, l``).
    """
    m = p.size
    Bo = np.empty(m)
    Ao = np.empty(m)
    Vo = np.empty(m)
    for i in range(m):
        v, A, B = _node(kind, p[i], q[i], nu, c0, c1, c2, Amax, Bmin, Bmax)
        Bo[i], Ao[i], Vo[i] = B, A, v
    return Bo, Ao, Vo


@njit(cache=True)
def maximize_upwind(kind, p_fwd, p_bwd, q, nu, c0, c1, c2, Amax, Bmin, Bmax):
    """Best of the ``B >= 0`` half with ``p_fwd`` and the ``B <= 0`` half with ``p_bwd``."""
    m = q.size
    Bo = np.empty(m)
    Ao = np.empty(m)
    Vo = np.empty(m)
    pos = max(Bmin, 0.0) < Bmax
    neg = Bmin < min(Bmax, 0.0)
    for i in range(m):
        best = (-INF, INF, INF)
        if pos:
            best = _node(kind, p_fwd[i], q[i], nu, c0, c1, c2, Amax, max(Bmin, 0.0), Bmax)
        if neg:
            v, A, B = _node(kind, p_bwd[i], q[i], nu, c0, c1, c2, Amax, Bmin, min(Bmax, 0.0))
            if _better(v, A, B, best[0], best[1], best[2]):
                best = (v, A, B)
        Bo[i], Ao[i], Vo[i] = best[2], best[1], best[0]
    return Bo, Ao, Vo
