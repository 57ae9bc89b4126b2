"""Mixing times, exponent fits, upper-bound constants and the sharpness test."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DomainError, HorizonTooShortError, InsufficientSweepError, ParameterError,
    ValidityWindowError,
)

logger = logging.getLogger(__name__)

MONOTONE_RTOL = 1e-12
SHARPNESS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DecayCurve:
    """History of ``||rho(t)||^2`` for one diffusivity."""

    kappa: float
    times: np.ndarray
    norm_sq: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        n = np.asarray(self.norm_sq, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "norm_sq", n)
        if t.shape != n.shape or t.ndim != 1 or t.size == 0:
            raise ParameterError("times and norm_sq must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ParameterError("times must be increasing")
        if np.any(n <= 0):
            raise ParameterError("norm_sq must stay positive")
        if np.any(n[1:] > n[:-1] * (1 + MONOTONE_RTOL)):
            raise ParameterError("norm_sq must be nonincreasing")


def mixing_time(curve, lam=0.5):
    """First time ``norm_sq <= lam * norm_sq(0)``.

    The crossing is located by linear interpolation of ``log norm_sq``
    between the bracketing samples.
    """
    if not 0.0 < lam <= 1.0:
        raise ParameterError("lambda must lie in (0, 1]")
    if lam == 1.0:
        return 0.0
    n = curve.norm_sq
    t = curve.times
    target = lam * n[0]
    hit = np.flatnonzero(n <= target)
    if hit.size == 0:
        raise HorizonTooShortError(
            f"norm only fell to {n[-1] / n[0]:.4g} of its initial value by t={t[-1]:.6g}",
            required_extension=_extension_estimate(t, n, target))
    i = int(hit[0])
    lo, hi = math.log(n[i - 1]), math.log(n[i])
    if hi == lo:
        return float(t[i])
    frac = (lo - math.log(target)) / (lo - hi)
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def _extension_estimate(t, n, target):
    # extrapolate the log-decay rate over the second half of the record
    half = t.size // 2
    if t.size >= 2 and n[-1] < n[half]:
        rate = (math.log(n[half]) - math.log(n[-1])) / (t[-1] - t[half])
        return float(math.log(n[-1] / target) / rate)
    return float(t[-1])


# --------------------------------------------------------------------------
# exponent fits


@dataclass(frozen=True)
class TheoreticalRate:
    exponent: float
    log_corrected: bool
    family: str


def theoretical_exponent(field_):
    """Enhanced-dissipation exponent ``p*`` with rate ``kappa**p*``.

    ``n/(n+2)`` for critical shears (log-corrected when ``n >= 2``),
    ``alpha/(alpha+2)`` for Weierstrass shears, ``1/3`` for Lipschitz shears
    and ``q/(q+2)`` for circular flows (log-corrected when ``q > 1``).
    """
    from .flows import Circular, CriticalShear, LipschitzShear, WeierstrassShear

    if isinstance(field_, CriticalShear):
        n = field_.n
        return TheoreticalRate(n / (n + 2.0), n >= 2, "critical")
    if isinstance(field_, WeierstrassShear):
        a = field_.alpha
        return TheoreticalRate(a / (a + 2.0), False, "holder")
    if isinstance(field_, LipschitzShear):
        return TheoreticalRate(1.0 / 3.0, False, "lipschitz")
    if isinstance(field_, Circular):
        q = field_.q
        return TheoreticalRate(q / (q + 2.0), q > 1, "circular")
    raise ParameterError(f"unknown velocity field {field_!r}")


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log t_mix = log prefactor + p log(1/kappa)``."""

    kappas: tuple
    mixing_times: tuple
    exponent: float
    prefactor: float
    residual: float
    theoretical: float | None = None
    family: str | None = None
    log_corrected: bool = False

    def to_dict(self):
        return {
            "kappas": list(self.kappas),
            "mixing_times": list(self.mixing_times),
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "residual": self.residual,
            "theoretical_exponent": self.theoretical,
            "family": self.family,
            "log_corrected": self.log_corrected,
        }


def fit_exponent(points, theory=None, min_points=4, min_decades=2.0):
    """Fit ``t_mix ~ prefactor * kappa**(-p)`` over a sweep.

    Parameters
    ----------
    points : iterable of (kappa, t_mix)
    theory : TheoreticalRate, optional
        Attached to the result for comparison.
    """
    pts = sorted((float(k), float(t)) for k, t in points)
    kappas = np.array([p[0] for p in pts])
    times = np.array([p[1] for p in pts])
    if np.unique(kappas).size < min_points:
        raise InsufficientSweepError(f"need at least {min_points} distinct kappa values")
    if np.any(kappas <= 0) or np.any(times <= 0):
        raise ParameterError("kappa and mixing times must be positive")
    span = math.log10(kappas.max() / kappas.min())
    if span < min_decades - 1e-9:
        raise InsufficientSweepError(
            f"kappa sweep spans {span:.3g} decades, need {min_decades}")
    x = np.log(1.0 / kappas)
    y = np.log(times)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(slope * x + intercept - y)))
    return RateFit(
        tuple(kappas.tolist()), tuple(times.tolist()), float(slope),
        float(math.exp(intercept)), resid,
        None if theory is None else theory.exponent,
        None if theory is None else theory.family,
        False if theory is None else theory.log_corrected,
    )


# --------------------------------------------------------------------------
# upper bounds


def bound_shape(form, n=None):
    """Bound shape ``g(x)`` with ``D(t) <= C ||rho0||^2 g(kappa**p t)``.

    ``"linear"``: ``x``; ``"critical"``: ``x + x**2 + x**(n+2)``;
    ``"circular"``: ``sqrt(x) + x |log((25-4x)/(1-4x))| + |log(1-4x/25)|``
    (finite for ``x < 1/4``).
    Returns ``(g, x_max)`` where ``x_max`` bounds the admissible arguments.
    """
    if form == "linear":
        return (lambda x: np.asarray(x, dtype=float)), math.inf
    if form == "critical":
        if n is None or n < 1:
            raise ParameterError("critical bound needs the critical order n")
        return (lambda x: x + x ** 2 + x ** (n + 2.0)), math.inf
    if form == "circular":
        def g(x):
            x = np.asarray(x, dtype=float)
            return (np.sqrt(x) + x * np.abs(np.log((25 - 4 * x) / (1 - 4 * x)))
                    + np.abs(np.log1p(-4 * x / 25)))
        return g, 0.25
    raise ParameterError(f"unknown bound form {form!r}")


@dataclass(frozen=True)
class BoundCheck:
    kappas: tuple
    c_fit: tuple
    spread: float
    form: str
    exponent: float

    def to_dict(self):
        return {"kappas": list(self.kappas), "c_fit": list(self.c_fit),
                "spread": self.spread, "form": self.form, "exponent": self.exponent}


def bound_constant(times, values, norm_sq, kappa, form, p, n=None, window=1.0):
    """``max D(t) / (||rho0||^2 g(kappa**p t))`` over the validity window.

    The window is ``kappa**p t <= window`` (the sharpness window ``t <= 1/(C xi)`` with
    ``C = 1/window``), further limited to ``x < 1/4`` for the circular form.
    """
    g, x_lim = bound_shape(form, n)
    t = np.asarray(times, dtype=float)
    D = np.asarray(values, dtype=float)
    x = kappa ** p * t
    keep = (t > 0) & (x <= window) & (x < x_lim)
    if not np.any(keep):
        raise ValidityWindowError(
            f"no recorded time inside the validity window at kappa={kappa:g}")
    return float(np.max(D[keep] / (norm_sq * g(x[keep]))))


def verify_upper_bound(curves, norms_sq, form, p, n=None, window=1.0):
    """Fitted bound constants across a sweep and their spread ``max/min``.

    ``curves`` are dissipation curves (anything with ``kappa``, ``times`` and
    ``values``); ``norms_sq`` holds the matching ``||rho0||^2``.
    """
    if np.ndim(norms_sq) == 0:
        norms_sq = [norms_sq] * len(curves)
    kappas, cs = [], []
    for curve, nsq in zip(curves, norms_sq):
        kappas.append(float(curve.kappa))
        cs.append(bound_constant(curve.times, curve.values, nsq, curve.kappa, form, p,
                                 n, window))
    cmax, cmin = max(cs), min(cs)
    if cmax == 0:
        spread = 1.0
    elif cmin <= 0:
        spread = math.inf
    else:
        spread = cmax / cmin
    return BoundCheck(tuple(kappas), tuple(cs), spread, form, float(p))


# --------------------------------------------------------------------------
# sharpness constraint


@dataclass(frozen=True)
class TabulatedBound:
    """Increasing bound shape given by samples, linearly interpolated.

    Arguments beyond the table raise :class:`DomainError`; the shape is never
    extrapolated.
    """

    x: tuple
    f: tuple

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if x.size < 2 or x[0] != 0.0 or f[0] != 0.0:
            raise ParameterError("tabulated bound must start at f(0) = 0")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(f) < 0):
            raise ParameterError("tabulated bound must be increasing")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s > self.x[-1]) or np.any(s < 0):
            raise DomainError(f"bound evaluated outside its table [0, {self.x[-1]}]")
        return np.interp(s, self.x, self.f)

    @classmethod
    def from_curves(cls, curves, norms_sq, p, x_grid):
        """Upper envelope of ``D(t) / ||rho0||^2`` against ``x = kappa**p t``.

        Each curve is interpolated at ``x_grid``; the pointwise maximum over
        curves is made nondecreasing by a running maximum.
        """
        x_grid = np.asarray(x_grid, dtype=float)
        if x_grid[0] != 0.0:
            x_grid = np.concatenate([[0.0], x_grid])
        if np.ndim(norms_sq) == 0:
            norms_sq = [norms_sq] * len(curves)
        env = np.zeros_like(x_grid)
        for curve, nsq in zip(curves, norms_sq):
            xc = curve.kappa ** p * np.asarray(curve.times, dtype=float)
            if xc[-1] < x_grid[-1] * (1 - 1e-9):
                raise ValidityWindowError(
                    f"curve at kappa={curve.kappa:g} stops at x={xc[-1]:.3g}")
            env = np.maximum(env, np.interp(x_grid, xc, np.asarray(curve.values) / nsq))
        env = np.maximum.accumulate(env)
        env[0] = 0.0
        return cls(tuple(x_grid.tolist()), tuple(env.tolist()))


@dataclass(frozen=True)
class Verdict:
    consistent: bool
    kappa_witness: float | None = None
    t_witness: float | None = None
    skipped: tuple = ()

    def to_dict(self):
        return {"verdict": "Consistent" if self.consistent else "Contradiction",
                "kappa_witness": self.kappa_witness, "t_witness": self.t_witness,
                "skipped": list(self.skipped)}


@dataclass(frozen=True, eq=False)
class SharpnessCheck:
    """Dissipation bound ``f(xi t)`` tested against a claimed rate ``r``."""

    f: Callable
    xi: Callable
    r: Callable
    C: float
    kappas: tuple

    def __post_init__(self):
        if self.C < 1:
            raise ParameterError("C must be >= 1")
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))


def named_shape(name):
    """``"linear"`` (``x``) or ``"quadratic"`` (``x**2``)."""
    shapes = {"linear": lambda x: x, "quadratic": lambda x: x * x}
    if name not in shapes:
        raise ParameterError(f"unknown bound shape {name!r}")
    return shapes[name]


def probe_time(xi, r):
    """``t = (xi r)**(-1/2)``, between ``1/r`` and ``1/xi`` whenever ``xi < r``."""
    return 1.0 / math.sqrt(xi * r)


def sharpness_constraint(check):
    """Evaluate ``1 - 2 f(xi t) <= C exp(-r t)`` at ``t = (xi r)**(-1/2)``.

    Grid points whose test time leaves the window ``t <= 1/(C xi)`` are
    skipped with a warning.  The first point violating the inequality by more
    than ``1e-12`` is returned as the contradiction witness.
    """
    f = named_shape(check.f) if isinstance(check.f, str) else check.f
    skipped = []
    for kappa in check.kappas:
        xi = float(check.xi(kappa))
        r = float(check.r(kappa))
        if xi <= 0 or r <= 0:
            raise ParameterError(f"rates must be positive (kappa={kappa:g})")
        t = probe_time(xi, r)
        if t > 1.0 / (check.C * xi):
            skipped.append(kappa)
            continue
        lhs = 1.0 - 2.0 * float(f(xi * t))
        rhs = check.C * math.exp(-r * t)
        logger.debug("kappa=%g t=%g lhs=%g rhs=%g", kappa, t, lhs, rhs)
        if lhs > rhs + SHARPNESS_TOL:
            _warn_skipped(skipped)
            return Verdict(False, kappa, t, tuple(skipped))
    _warn_skipped(skipped)
    return Verdict(True, skipped=tuple(skipped))


def _warn_skipped(skipped):
    if skipped:
        warnings.warn(f"{len(skipped)} kappa value(s) skipped: test time outside "
                      "the bound's validity window", stacklevel=3)
