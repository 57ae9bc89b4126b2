"""Velocity fields, critical-point analysis and the localized tent data.

Shear fields act on ``T x D`` with velocity ``(u(y), 0)``; the circular flow acts
on the plane with angular speed ``r**q``.  Initial data are tent profiles of
half-width ``kappa**beta`` multiplied by ``sin x`` (or ``sin theta``), so they
have zero average along every streamline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import bisect

from .errors import DomainError, IndeterminateOrderError, ParameterError

TWO_PI = 2.0 * math.pi
SAMPLED_POINTS = 2 ** 14
ORDER_THRESHOLD = 1e-5
MAX_PROBED_ORDER = 8


class DomainKind(enum.Enum):
    TORUS2 = "torus2"
    TORUS_STRIP = "torus_strip"
    POLAR_PLANE = "polar_plane"


@dataclass(frozen=True)
class Domain:
    kind: DomainKind = DomainKind.TORUS2
    L_y: float | None = None
    R_max: float | None = None

    def __post_init__(self):
        if self.kind is DomainKind.TORUS_STRIP and not (self.L_y and self.L_y > 0):
            raise ParameterError("a strip domain needs L_y > 0")
        if self.R_max is not None and self.R_max <= 0:
            raise ParameterError("R_max must be positive")

    @classmethod
    def torus(cls):
        return cls(DomainKind.TORUS2)

    @classmethod
    def strip(cls, L_y):
        return cls(DomainKind.TORUS_STRIP, L_y=float(L_y))

    @classmethod
    def plane(cls, R_max=None):
        return cls(DomainKind.POLAR_PLANE, R_max=None if R_max is None else float(R_max))

    @property
    def periodic_y(self):
        return self.kind is DomainKind.TORUS2

    @property
    def y_bounds(self):
        """Interval of the transverse coordinate used for grids and searches."""
        if self.kind is DomainKind.TORUS2:
            return 0.0, TWO_PI
        if self.kind is DomainKind.TORUS_STRIP:
            return -self.L_y, self.L_y
        return 0.0, self.R_max if self.R_max is not None else math.inf

    def check(self, coord):
        """Raise :class:`DomainError` unless the transverse coordinate is admissible."""
        c = np.asarray(coord, dtype=float)
        if not np.all(np.isfinite(c)):
            raise DomainError(f"non-finite coordinate {coord!r}")
        if self.kind is DomainKind.TORUS_STRIP and np.any(np.abs(c) > self.L_y):
            raise DomainError(f"y={coord!r} outside the strip |y| <= {self.L_y}")
        if self.kind is DomainKind.POLAR_PLANE:
            if np.any(c <= 0):
                raise DomainError(f"r={coord!r} must be positive")
            if self.R_max is not None and np.any(c > self.R_max):
                raise DomainError(f"r={coord!r} beyond R_max={self.R_max}")


# --------------------------------------------------------------------------
# shear profiles


@dataclass(frozen=True)
class SinPower:
    """``amplitude * sin(y)**power``."""

    power: int = 1
    amplitude: float = 1.0

    def __call__(self, y):
        return self.amplitude * np.sin(y) ** self.power

    def to_dict(self):
        return {"profile": "sin", "power": self.power, "amplitude": self.amplitude}


@dataclass(frozen=True)
class Monomial:
    """``coef * y**n``; ``n = 0`` is a constant shear."""

    n: int = 1
    coef: float = 1.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.n == 0:
            return np.full_like(y, self.coef)
        return self.coef * y ** self.n

    def to_dict(self):
        return {"profile": "monomial", "power": self.n, "amplitude": self.coef}


@dataclass(frozen=True, eq=False)
class SampledProfile:
    """Profile tabulated on an equispaced grid, linearly interpolated."""

    values: np.ndarray
    lo: float
    hi: float
    periodic: bool = True

    @classmethod
    def from_function(cls, fn, lo, hi, periodic=True, n=SAMPLED_POINTS):
        if periodic:
            y = lo + (hi - lo) * np.arange(n) / n
        else:
            y = np.linspace(lo, hi, n)
        return cls(np.asarray(fn(y), dtype=float), float(lo), float(hi), periodic)

    @property
    def grid(self):
        n = self.values.size
        if self.periodic:
            return self.lo + (self.hi - self.lo) * np.arange(n) / n
        return np.linspace(self.lo, self.hi, n)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.periodic:
            return np.interp(y, self.grid, self.values, period=self.hi - self.lo)
        return np.interp(y, self.grid, self.values)

    def to_dict(self):
        return {"profile": "sampled", "values": self.values.tolist(),
                "lo": self.lo, "hi": self.hi, "periodic": self.periodic}


# --------------------------------------------------------------------------
# finite differences


def fd_weights(order, offsets):
    """Fornberg weights for the ``order``-th derivative at 0 on ``offsets``."""
    x = np.asarray(offsets, dtype=float)
    n = x.size
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def derivative(fn, y, order, step, accuracy=8):
    """Central finite-difference derivative of ``fn`` at ``y`` (vectorised)."""
    half = (order + 1) // 2 - 1 + accuracy // 2
    offsets = np.arange(-half, half + 1)
    w = fd_weights(order, offsets)
    y = np.asarray(y, dtype=float)
    acc = np.zeros_like(y)
    for k, wk in zip(offsets, w):
        if wk != 0.0:
            acc = acc + wk * fn(y + k * step)
    return acc / step ** order


# --------------------------------------------------------------------------
# velocity fields


@dataclass(frozen=True)
class CriticalPoint:
    y: float
    order: int  # smallest n >= 2 with u^(n)(y) != 0

    @property
    def vanishing_order(self):
        """Order to which ``u'`` vanishes at the point."""
        return self.order - 1


@dataclass(frozen=True, eq=False)
class CriticalShear:
    """Regular shear ``u(y)`` with finitely many critical points.

    ``n`` is the maximal order of the critical points (``u^(n) != 0``), or 1
    for a shear without critical points.  When omitted it is detected.
    """

    profile: Callable
    domain: Domain = field(default_factory=Domain.torus)
    n: int | None = None
    grid_resolution: int = 1024

    def __post_init__(self):
        detected = max((c.order for c in self.critical_points), default=1)
        if self.n is None:
            object.__setattr__(self, "n", detected)
        elif self.n != detected:
            raise ParameterError(
                f"declared n={self.n} but the profile's maximal critical order is {detected}")

    @cached_property
    def critical_points(self):
        return _find_critical_points(self.profile, self.domain, self.grid_resolution)

    def speed(self, y):
        return self.profile(y)


@dataclass(frozen=True)
class WeierstrassShear:
    """Partial sum ``sum_{l=1..L} 3**(-alpha l) sin(3**l y)`` on the torus."""

    alpha: float
    L: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.L < 1:
            raise ParameterError("truncation level L must be >= 1")

    @classmethod
    def for_kappa(cls, alpha, kappa):
        return cls(alpha, default_weierstrass_level(alpha, kappa))

    @property
    def domain(self):
        return Domain.torus()

    @property
    def coefficients(self):
        levels = np.arange(1, self.L + 1)
        return 3.0 ** (-self.alpha * levels), 3.0 ** levels

    def speed(self, y):
        y = np.asarray(y, dtype=float)
        coef, freq = self.coefficients
        out = np.zeros_like(y)
        for c, f in zip(coef, freq):
            out += c * np.sin(f * y)
        return out

    def profile(self, y):
        return self.speed(y)


@dataclass(frozen=True, eq=False)
class LipschitzShear:
    """Shear known only through its Lipschitz bound."""

    profile: Callable
    lipschitz_const: float | None = None
    domain: Domain = field(default_factory=Domain.torus)

    def __post_init__(self):
        if self.lipschitz_const is None:
            lo, hi = _search_interval(self.domain)
            y = np.linspace(lo, hi, 4096)
            slope = np.abs(derivative(self.profile, y, 1, (hi - lo) * 1e-4, 6))
            object.__setattr__(self, "lipschitz_const", float(slope.max()))

    def speed(self, y):
        return self.profile(y)


@dataclass(frozen=True)
class Circular:
    """Rotation with angular speed ``r**q`` about the origin."""

    q: float

    def __post_init__(self):
        if self.q < 1:
            raise ParameterError("circular flows need q >= 1")

    @property
    def domain(self):
        return Domain.plane()

    def speed(self, r):
        return np.asarray(r, dtype=float) ** self.q


SHEAR_TYPES = (CriticalShear, WeierstrassShear, LipschitzShear)
VelocityField = CriticalShear | WeierstrassShear | LipschitzShear | Circular


def is_shear(field_):
    return isinstance(field_, SHEAR_TYPES)


def default_weierstrass_level(alpha, kappa):
    """``ceil(log3(kappa**(-1/(alpha+2)))) + 2``."""
    if not 0.0 < kappa < 1.0:
        raise ParameterError("kappa must lie in (0, 1)")
    return int(math.ceil(math.log(kappa ** (-1.0 / (alpha + 2.0)), 3) - 1e-12)) + 2


def eval_velocity(field_, point):
    """Shear speed ``u(y)`` or angular speed ``r**q`` at ``point``.

    ``point`` is either the transverse coordinate alone or an ``(x, y)`` /
    ``(r, theta)`` pair.
    """
    coord = point
    if _is_pair(point):
        coord = point[0] if isinstance(field_, Circular) else point[1]
    field_.domain.check(coord)
    value = field_.speed(np.asarray(coord, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def _is_pair(point):
    return isinstance(point, (tuple, list)) and len(point) == 2


def _search_interval(domain):
    lo, hi = domain.y_bounds
    if not math.isfinite(hi):
        raise ParameterError("critical-point search needs a bounded interval")
    return lo, hi


def _find_critical_points(profile, domain, grid_resolution):
    if grid_resolution < 256:
        raise ParameterError("grid_resolution must be >= 256")
    lo, hi = _search_interval(domain)
    length = hi - lo
    periodic = domain.periodic_y
    scale = length / TWO_PI
    h_root = 1e-3 * scale
    h_order = 0.05 * scale

    def d1(y):
        return derivative(profile, y, 1, h_root)

    def d2(y):
        return derivative(profile, y, 2, h_root)

    # shifted grid so that symmetric critical points never sit on a node
    shift = 0.3819660112501051 * length / grid_resolution
    if periodic:
        ys = lo + shift + length * np.arange(grid_resolution + 1) / grid_resolution
    else:
        ys = lo + shift + (length - 2 * shift) * np.arange(grid_resolution) / (grid_resolution - 1)
    g1 = d1(ys)
    g2 = d2(ys)
    slope_scale = max(float(np.abs(g1).max()), 1e-300)
    u_scale = max(float(np.abs(profile(ys)).max()), 1e-300)

    roots = []
    for i in range(ys.size - 1):
        a, b = ys[i], ys[i + 1]
        if g1[i] * g1[i + 1] < 0:
            roots.append(bisect(d1, a, b, xtol=1e-12, maxiter=200))
        elif g2[i] * g2[i + 1] < 0:
            y2 = bisect(d2, a, b, xtol=1e-12, maxiter=200)
            if abs(d1(y2)) <= 1e-6 * slope_scale:
                roots.append(y2)

    found = []
    for y in roots:
        if periodic:
            y = (y - lo) % length + lo
            if hi - y < 1e-9:
                y = lo
        if any(abs(y - c) < 1e-8 for c in found):
            continue
        found.append(y)
    found.sort()

    points = []
    for y in found:
        for j in range(1, MAX_PROBED_ORDER):
            dj = float(derivative(profile, y, j + 1, h_order))
            if abs(dj) > ORDER_THRESHOLD * u_scale:
                points.append(CriticalPoint(float(y), j + 1))
                break
        else:
            raise IndeterminateOrderError(
                f"all derivatives up to order {MAX_PROBED_ORDER} vanish at y={y:.12g}")
    return points


def critical_points(field_, grid_resolution=1024):
    """Critical points of a shear profile with their orders.

    Sign changes of ``u'`` (and, for even-order zeros, of ``u''``) are bracketed
    on a grid and refined by bisection; each point is tagged with the smallest
    ``n`` such that ``|u^(n)|`` exceeds ``1e-5 * max|u|``.
    """
    profile = field_.profile if hasattr(field_, "profile") else field_
    domain = getattr(field_, "domain", Domain.torus())
    return _find_critical_points(profile, domain, grid_resolution)


# --------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class TentProfile:
    """``max(0, (w - |s|) / w)``: continuous, piecewise linear, peak 1."""

    half_width: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.maximum(0.0, (self.half_width - np.abs(s)) / self.half_width)

    def lp_integral(self, p):
        """``int |phi|^p ds = 2 w / (p + 1)``."""
        return 2.0 * self.half_width / (p + 1.0)

    @property
    def lipschitz(self):
        return 1.0 / self.half_width


@dataclass(frozen=True)
class InitialDatum:
    """``phi(y - center) sin x`` (shear) or ``phi(r - center) sin theta`` (circular)."""

    kind: str
    kappa: float
    beta: float
    center: float
    domain: Domain

    @property
    def tent(self):
        return TentProfile(self.kappa ** self.beta)

    @property
    def half_width(self):
        return self.kappa ** self.beta

    @property
    def support(self):
        w = self.half_width
        return self.center - w, self.center + w

    def offset(self, coord):
        s = np.asarray(coord, dtype=float) - self.center
        if self.kind == "shear" and self.domain.periodic_y:
            s = (s + math.pi) % TWO_PI - math.pi
        return s

    def profile(self, coord):
        return self.tent(self.offset(coord))

    def __call__(self, a, b):
        """Value at ``(x, y)`` or ``(r, theta)``."""
        if self.kind == "shear":
            return self.profile(b) * np.sin(a)
        return self.profile(a) * np.sin(b)


def make_initial_datum(field_, kappa):
    """Localized tent datum matched to the field's family.

    * critical shear: centred at the smallest critical point of maximal order,
      ``beta = 1/(n+2)``;
    * Weierstrass / Lipschitz shear: ``beta = 1/(alpha+2)`` (``alpha = 1`` for
      Lipschitz), centred where the profile's slope is largest;
    * circular: ``beta = 1/(q+2)``, centred at ``r = 3 kappa**beta``.
    """
    if not 0.0 < kappa < 1.0:
        raise ParameterError(f"kappa={kappa} outside (0, 1)")
    if isinstance(field_, CriticalShear):
        points = field_.critical_points
        if not points:
            raise ParameterError("critical shear has no critical point to localize at; "
                                 "use LipschitzShear for monotone profiles")
        top = max(c.order for c in points)
        center = min(c.y for c in points if c.order == top)
        return InitialDatum("shear", kappa, 1.0 / (top + 2.0), center, field_.domain)
    if isinstance(field_, WeierstrassShear):
        # every cosine in the derivative of the partial sum peaks at y = 0
        return InitialDatum("shear", kappa, 1.0 / (field_.alpha + 2.0), 0.0, field_.domain)
    if isinstance(field_, LipschitzShear):
        lo, hi = _search_interval(field_.domain)
        y = lo + (hi - lo) * np.arange(4096) / 4096
        slope = np.abs(derivative(field_.profile, y, 1, (hi - lo) * 1e-4, 6))
        center = float(y[int(np.argmax(slope >= slope.max() * (1 - 1e-9)))])
        return InitialDatum("shear", kappa, 1.0 / 3.0, center, field_.domain)
    if isinstance(field_, Circular):
        beta = 1.0 / (field_.q + 2.0)
        return InitialDatum("circular", kappa, beta, 3.0 * kappa ** beta, field_.domain)
    raise ParameterError(f"unsupported field {field_!r}")


@dataclass(frozen=True)
class DatumNorms:
    lp_norm_sq: float
    grad_x_inf_sq: float  # d/dx for shear data, d/dtheta for circular data
    grad_y_inf_sq: float  # d/dy for shear data, d/dr for circular data


def abs_sin_power_integral(p):
    """``int_0^{2 pi} |sin x|^p dx``."""
    return 2.0 * math.sqrt(math.pi) * math.gamma((p + 1) / 2.0) / math.gamma(p / 2.0 + 1.0)


def datum_norms(datum, p=2.0):
    """Closed-form ``||rho0||_{L^p}^2`` and squared sup-norms of the gradients."""
    if p < 1:
        raise ParameterError("p must be >= 1")
    tent = datum.tent
    transverse = tent.lp_integral(p)
    if datum.kind == "circular":
        # int phi(r - c)^p r dr = c * int phi^p for a symmetric tent
        transverse *= datum.center
    integral = abs_sin_power_integral(p) * transverse
    return DatumNorms(integral ** (2.0 / p), 1.0, tent.lipschitz ** 2)


def field_summary(field_) -> dict:
    """Plain-dict description used in reports."""
    if isinstance(field_, CriticalShear):
        return {"family": "critical_shear", "n": field_.n,
                "critical_points": [(c.y, c.order) for c in field_.critical_points]}
    if isinstance(field_, WeierstrassShear):
        return {"family": "weierstrass", "alpha": field_.alpha, "L": field_.L}
    if isinstance(field_, LipschitzShear):
        return {"family": "lipschitz_shear", "lipschitz_const": field_.lipschitz_const}
    return {"family": "circular", "q": field_.q}


__all__: Sequence[str] = [
    "Domain", "DomainKind", "SinPower", "Monomial", "SampledProfile",
    "CriticalShear", "WeierstrassShear", "LipschitzShear", "Circular",
    "CriticalPoint", "TentProfile", "InitialDatum", "DatumNorms",
    "eval_velocity", "critical_points", "make_initial_datum", "datum_norms",
    "default_weierstrass_level", "derivative", "fd_weights", "is_shear",
]
