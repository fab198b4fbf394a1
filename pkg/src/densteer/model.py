"""Market parameters, target laws, running costs and terminal penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .numerics import Grid, integrate

KL_FLOOR = 1e-12
# exp(700) is close to the float64 limit
EXP_CLAMP = 700.0
MIN_DOMAIN_MASS = 0.999


@dataclass(frozen=True)
class MarketParams:
    """Scalar market: drift ``mu``, volatility ``sigma``.

    ``nu_schedule`` optionally overrides the market-price-of-risk magnitude
    ``|mu| / sigma`` with one value per time level (length ``N + 1``).
    """

    mu: float
    sigma: float
    nu_schedule: tuple | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.nu_schedule is not None:
            nu = np.asarray(self.nu_schedule, dtype=float)
            if nu.ndim != 1 or np.any(~np.isfinite(nu)) or np.any(nu < 0):
                raise ValueError("nu_schedule must be a 1-d array of nonnegative values")

    @property
    def nu(self) -> float:
        return abs(self.mu) / self.sigma

    def nu_levels(self, grid: Grid) -> np.ndarray:
        """``||nu_t||`` at every time level of ``grid``."""
        if self.nu_schedule is None:
            return np.full(grid.N + 1, self.nu)
        nu = np.asarray(self.nu_schedule, dtype=float)
        if nu.shape != (grid.N + 1,):
            raise ValueError(f"nu_schedule has {nu.size} entries, grid needs {grid.N + 1}")
        return nu


# --- target distributions -------------------------------------------------


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Normal sd must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mean, self.sd)

    def domain_mass(self, a, b):
        return stats.norm.cdf(b, self.mean, self.sd) - stats.norm.cdf(a, self.mean, self.sd)


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.components) or len(w) == 0:
            raise ValueError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def domain_mass(self, a, b):
        return sum(w * c.domain_mass(a, b) for w, c in zip(self.weights, self.components))


@dataclass(frozen=True)
class Weibull:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull shape and scale must be positive")

    def pdf(self, x):
        return stats.weibull_min.pdf(x, self.shape, scale=self.scale)

    def domain_mass(self, a, b):
        cdf = stats.weibull_min.cdf
        return cdf(b, self.shape, scale=self.scale) - cdf(a, self.shape, scale=self.scale)


@dataclass(frozen=True)
class Tabulated:
    """Density given by samples on arbitrary nodes, linearly interpolated."""

    nodes: tuple
    values: tuple

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 2:
            raise ValueError("tabulated nodes and values must be matching 1-d arrays")
        if np.any(np.diff(x) <= 0):
            raise ValueError("tabulated nodes must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("tabulated values must be nonnegative")

    def pdf(self, x):
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)

    def domain_mass(self, a, b):
        x = np.asarray(self.nodes, dtype=float)
        v = np.asarray(self.values, dtype=float)
        total = np.trapezoid(v, x)
        inside = np.clip(x, a, b)
        return np.trapezoid(self.pdf(inside) * ((x >= a) & (x <= b)), inside) / total


@dataclass(frozen=True)
class PointMass:
    location: float

    def pdf(self, x):
        raise TypeError("a point mass has no pointwise density")

    def domain_mass(self, a, b):
        return 1.0 if a <= self.location <= b else 0.0


TargetDistribution = Normal | Mixture | Weibull | Tabulated | PointMass


def target_density(target: TargetDistribution, grid: Grid) -> np.ndarray:
    """Target density at the grid nodes, renormalized to unit rectangle-rule mass."""
    mass = float(target.domain_mass(grid.x_min, grid.x_max))
    if mass < MIN_DOMAIN_MASS:
        raise ValueError(
            f"only {mass:.6f} of the target mass lies in [{grid.x_min}, {grid.x_max}]"
        )
    if isinstance(target, PointMass):
        rho = np.zeros(grid.M)
        rho[int(round((target.location - grid.x_min) / grid.dx))] = 1.0 / grid.dx
        return rho
    rho = np.asarray(target.pdf(grid.x), dtype=float)
    total = integrate(rho, grid.dx)
    if not total > 0:
        raise ValueError("target density vanishes on every grid node")
    return rho / total


# --- running costs --------------------------------------------------------


@dataclass(frozen=True)
class ControlBox:
    A_max: float = 2.0
    B_min: float = -1.0
    B_max: float = 1.0

    def __post_init__(self):
        if not self.A_max > 0:
            raise ValueError("A_max must be positive")
        if not self.B_min < self.B_max:
            raise ValueError("B_min must be below B_max")


@dataclass(frozen=True)
class QuadraticShift:
    """``F = (A - a_center)^2 + (B - b_center)^2`` on the self-financing cone."""

    a_center: float = 0.2
    b_center: float = 0.2
    box: ControlBox = field(default_factory=ControlBox)

    def at(self, t: float) -> "QuadraticShift":
        return self

    def value(self, B, A, nu=None, t=None):
        return (A - self.a_center) ** 2 + (B - self.b_center) ** 2


@dataclass(frozen=True)
class KSchedule:
    """Piecewise-constant ``K(t)`` from ``(t_start, t_end, K)`` segments covering [0, 1]."""

    segments: tuple

    def __post_init__(self):
        segs = sorted((float(a), float(b), float(k)) for a, b, k in self.segments)
        if not segs:
            raise ValueError("K schedule needs at least one segment")
        for a, b, k in segs:
            if not (0.0 <= a < b <= 1.0):
                raise ValueError(f"bad K segment [{a}, {b}]")
            if not k > 0:
                raise ValueError("K must be positive")
        if abs(segs[0][0]) > 1e-12 or abs(segs[-1][1] - 1.0) > 1e-12:
            raise ValueError("K schedule must cover [0, 1]")
        for (a0, b0, _), (a1, b1, _) in zip(segs, segs[1:]):
            if a1 < b0 - 1e-12:
                raise ValueError(f"K segments [{a0}, {b0}] and [{a1}, {b1}] overlap")
            if a1 > b0 + 1e-12:
                raise ValueError(f"K schedule has a gap between {b0} and {a1}")
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def constant(cls, K: float) -> "KSchedule":
        return cls(((0.0, 1.0, K),))

    def __call__(self, t: float) -> float:
        # segments are half-open [a, b) except the last one
        for a, b, k in self.segments:
            if t < b - 1e-12:
                return k
        return self.segments[-1][2]


@dataclass(frozen=True)
class CashInputPiecewise:
    """Cost that prices drift above the self-financing frontier.

    ``K (B^2 - nu^2 A) + w A^2`` above the frontier ``B = nu sqrt(A)``,
    ``w A^2`` between the frontier and zero drift, ``l B^2 + w A^2`` for
    negative drift. ``K`` may vary in time through ``schedule``.
    """

    schedule: KSchedule
    w: float = 0.01
    l: float = 0.01
    box: ControlBox = field(default_factory=ControlBox)
    K: float | None = None

    def __post_init__(self):
        if not (self.w > 0 and self.l > 0):
            raise ValueError("w and l must be positive")

    def at(self, t: float) -> "CashInputPiecewise":
        return CashInputPiecewise(self.schedule, self.w, self.l, self.box, self.schedule(t))

    def value(self, B, A, nu, t=0.0):
        K = self.K if self.K is not None else self.schedule(t)
        B = np.asarray(B, dtype=float)
        A = np.asarray(A, dtype=float)
        frontier = nu * np.sqrt(np.maximum(A, 0.0))
        above = K * (B**2 - nu**2 * A)
        below = self.l * B**2
        extra = np.where(B > frontier, above, np.where(B < 0, below, 0.0))
        return extra + self.w * A**2


CostSpec = QuadraticShift | CashInputPiecewise


def feasible_controls(B, A, nu_norm, tol: float = 0.0):
    """Self-financing test ``(B^+)^2 <= nu^2 A``."""
    B = np.asarray(B, dtype=float)
    A = np.asarray(A, dtype=float)
    return np.maximum(B, 0.0) ** 2 <= nu_norm**2 * A + tol


def recover_portfolio_weight(B_field, grid: Grid, market: MarketParams, x_eps: float = 1e-12):
    """Risky-asset weight ``B / (mu x)``; NaN marks nodes with ``|x| <= x_eps``."""
    x = grid.x
    B = np.asarray(B_field, dtype=float)
    out = np.full(np.broadcast(B, x).shape, np.nan)
    ok = np.broadcast_to(np.abs(x) > x_eps, out.shape)
    denom = np.broadcast_to(market.mu * x, out.shape)
    Bb = np.broadcast_to(B, out.shape)
    out[ok] = Bb[ok] / denom[ok]
    return out


# --- terminal penalties ---------------------------------------------------


@dataclass(frozen=True)
class SquaredL2:
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be finite and positive")


@dataclass(frozen=True)
class KullbackLeibler:
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be finite and positive")


@dataclass(frozen=True)
class Indicator:
    tol: float = 1e-6


PenaltySpec = SquaredL2 | KullbackLeibler | Indicator


def penalty_value(spec: PenaltySpec, rho1, target, dx: float) -> float:
    rho1 = np.asarray(rho1, dtype=float)
    target = np.asarray(target, dtype=float)
    if isinstance(spec, SquaredL2):
        return 0.5 * spec.lam * integrate((rho1 - target) ** 2, dx)
    if isinstance(spec, KullbackLeibler):
        ratio = np.maximum(rho1, KL_FLOOR) / np.maximum(target, KL_FLOOR)
        return spec.lam * integrate(rho1 * np.log(ratio), dx)
    if isinstance(spec, Indicator):
        return 0.0 if np.max(np.abs(rho1 - target)) <= spec.tol else math.inf
    raise TypeError(f"unknown penalty {spec!r}")


def _kl_exponent(phi1, lam):
    e = -np.asarray(phi1, dtype=float) / lam - 1.0
    return np.minimum(e, EXP_CLAMP)


def conjugate_overflow(spec: PenaltySpec, phi1) -> bool:
    """True when the KL exponential had to be clamped."""
    if not isinstance(spec, KullbackLeibler):
        return False
    return bool(np.any(-np.asarray(phi1) / spec.lam - 1.0 > EXP_CLAMP))


def conjugate_value(spec: PenaltySpec, phi1, target, dx: float) -> float:
    """Convex conjugate of the penalty evaluated at ``-phi1``."""
    phi1 = np.asarray(phi1, dtype=float)
    target = np.asarray(target, dtype=float)
    if isinstance(spec, SquaredL2):
        return integrate(-phi1 * target + phi1**2 / (2.0 * spec.lam), dx)
    if isinstance(spec, KullbackLeibler):
        return integrate(spec.lam * target * np.exp(_kl_exponent(phi1, spec.lam)), dx)
    if isinstance(spec, Indicator):
        return integrate(-phi1 * target, dx)
    raise TypeError(f"unknown penalty {spec!r}")


def conjugate_gradient(spec: PenaltySpec, phi1, target) -> np.ndarray:
    """Pointwise functional derivative of ``conjugate_value`` w.r.t. ``phi1``."""
    phi1 = np.asarray(phi1, dtype=float)
    target = np.asarray(target, dtype=float)
    if isinstance(spec, SquaredL2):
        return -target + phi1 / spec.lam
    if isinstance(spec, KullbackLeibler):
        return -target * np.exp(_kl_exponent(phi1, spec.lam))
    if isinstance(spec, Indicator):
        return -target.copy()
    raise TypeError(f"unknown penalty {spec!r}")
