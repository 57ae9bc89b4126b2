"""Per-mode solvers for the advection-diffusion equation.

A datum ``phi(y) sin x`` excites only the ``k = 1`` streamwise Fourier mode of
a shear problem, and ``phi(r) sin theta`` only the ``m = 1`` azimuthal mode of
a circular one, so a single 1-D complex equation carries the whole solution.
With ``rho = Re(a e^{ikx})`` the physical quantities are

    ||rho||^2 = pi int |a|^2 dy,
    kappa ||grad rho||^2 = kappa pi int (|a_y|^2 + delta k^2 |a|^2) dy,

and likewise with ``r dr`` weights and ``m^2 / r^2`` in the polar case.  A
real radial profile with ``m = 0`` carries weight ``2 pi`` instead of ``pi``.

Dissipation is accumulated per step.  The default ``"exact"`` accounting uses
the exact dissipation of each diffusion substep (Fourier factors for shears,
the Crank-Nicolson midpoint form for the radial scheme), so the energy
equality holds to roundoff.  ``"trapezoid"`` integrates ``kappa ||grad rho||^2``
over the step by the trapezoidal rule and exposes the second-order splitting
error instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import NumericalInstabilityError, ParameterError, ResolutionError
from .flows import Circular, InitialDatum, is_shear
from .rates import DecayCurve

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
PHASE_BUDGET = 0.05
DEFAULT_CELLS = 256
ACCOUNTING = ("exact", "trapezoid")


@dataclass(frozen=True, eq=False)
class ModeSolution:
    """Norm and cumulative dissipation history of one mode solve."""

    times: np.ndarray
    norm_sq: np.ndarray
    dissipation: np.ndarray
    final: np.ndarray
    grid: np.ndarray
    kappa: float


def _step_grid(t_end, dt, record_times):
    """Uniform steps of ``dt`` that land exactly on every record time."""
    marks = np.unique(np.concatenate([[0.0], np.asarray(record_times, float), [t_end]]))
    marks = marks[(marks >= 0) & (marks <= t_end)]
    pieces = [np.array([0.0])]
    for a, b in zip(marks[:-1], marks[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        pieces.append(a + (b - a) * np.arange(1, n + 1) / n)
        pieces[-1][-1] = b
    return np.concatenate(pieces)


def _check_finite(value, t):
    if not math.isfinite(value):
        raise NumericalInstabilityError(f"non-finite norm at t={t:.6g}")


# --------------------------------------------------------------------------
# shear modes


def shear_grid_size(scale, length=TWO_PI, refine=1):
    """Smallest power of two >= 256 with spacing <= scale / 32 (times ``refine``)."""
    N = 256
    while length / N > scale / 32.0:
        N *= 2
    return N * int(refine)


@dataclass(frozen=True, eq=False)
class ShearModeProblem:
    """``a_t = -i k u(y) a + kappa (a_yy - delta k^2 a)`` on a periodic y-grid."""

    k: int
    delta: int
    kappa: float
    u: np.ndarray
    N: int
    length: float = TWO_PI
    y0: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("shear wavenumber k must be >= 1")
        if self.delta not in (0, 1):
            raise ParameterError("delta must be 0 or 1")
        if self.kappa < 0:
            raise ParameterError("kappa must be non-negative")
        if self.N < 256 or self.N & (self.N - 1):
            raise ParameterError("N must be a power of two >= 256")
        if np.shape(self.u) != (self.N,):
            raise ParameterError("u must be sampled on the N-point grid")

    @classmethod
    def from_field(cls, field_, kappa, k=1, delta=0, N=None, scale=None, refine=1):
        """Sample ``field_`` on a grid fine enough for a datum of half width ``scale``."""
        if not is_shear(field_):
            raise ParameterError("ShearModeProblem needs a shear field")
        lo, hi = field_.domain.y_bounds
        length = hi - lo
        if N is None:
            if scale is None:
                raise ParameterError("give either N or the datum scale")
            N = shear_grid_size(scale, length, refine)
        y = lo + length * np.arange(N) / N
        return cls(k, delta, kappa, np.asarray(field_.speed(y), dtype=float), N, length, lo)

    @property
    def y(self):
        return self.y0 + self.length * np.arange(self.N) / self.N

    @property
    def wavenumbers(self):
        return TWO_PI / self.length * np.fft.fftfreq(self.N, 1.0 / self.N)

    def default_dt(self):
        speed = self.k * float(np.max(np.abs(self.u)))
        return PHASE_BUDGET / speed if speed > 0 else math.inf


def shear_mode_profile(problem, datum):
    """Mode amplitude of ``phi(y - c) sin x``: ``a = -i phi``.

    The tent is represented by its exact Fourier coefficients on the periodic
    grid (an L2 projection), so its norm is reproduced to the truncated tail.
    """
    w = datum.half_width
    xi = problem.wavenumbers
    coef = (w / problem.length) * np.sinc(xi * w / (2.0 * math.pi)) ** 2
    coef = coef * np.exp(-1j * xi * (datum.center - problem.y0))
    return -1j * problem.N * np.fft.ifft(coef)


def solve_shear_mode(problem, a0, t_end, dt=None, record_times=(), record_every=1,
                     stop_below=None, dissipation="exact"):
    """Strang splitting: half phase, exact Fourier heat step, half phase.

    Parameters
    ----------
    problem : ShearModeProblem
    a0 : complex array on the problem grid
    t_end : float
    dt : float, optional
        Defaults to ``0.05 / max|k u|`` (capped at ``t_end / 100``).
    record_times : sequence of float
        Times that must be hit exactly and recorded.
    record_every : int
        Record every n-th step in addition to ``record_times``.
    stop_below : float, optional
        Stop after the first step where ``norm_sq <= stop_below * norm_sq(0)``.
    dissipation : {"exact", "trapezoid"}
    """
    if dissipation not in ACCOUNTING:
        raise ParameterError(f"dissipation accounting must be one of {ACCOUNTING}")
    a = np.array(a0, dtype=complex)
    if a.shape != (problem.N,):
        raise ParameterError("a0 must live on the problem grid")
    if dt is None:
        dt = min(problem.default_dt(), t_end / 100.0 if t_end > 0 else 1.0)
    if dt <= 0:
        raise ParameterError("dt must be positive")

    grid = _step_grid(t_end, dt, record_times)
    marks = set(np.asarray(record_times, float).tolist())
    lam = problem.wavenumbers ** 2 + problem.delta * problem.k ** 2
    w_phys = math.pi * problem.length / problem.N
    w_spec = w_phys / problem.N
    ku = problem.k * problem.u
    kappa = problem.kappa
    cache = {}

    def factors(h):
        key = round(h, 15)
        if key not in cache:
            cache[key] = (np.exp(-0.5j * ku * h), np.exp(-kappa * lam * h),
                          -np.expm1(-2.0 * kappa * lam * h))
        return cache[key]

    def grad_sq(ahat):
        return kappa * w_spec * float(np.sum(lam * np.abs(ahat) ** 2))

    norm0 = w_phys * float(np.vdot(a, a).real)
    times, norms, diss = [0.0], [norm0], [0.0]
    D = 0.0
    g_prev = grad_sq(np.fft.fft(a)) if dissipation == "trapezoid" else 0.0
    for j in range(1, grid.size):
        h = grid[j] - grid[j - 1]
        ph, heat, loss = factors(h)
        ahat = np.fft.fft(ph * a)
        if dissipation == "exact":
            D += 0.5 * w_spec * float(np.sum(loss * np.abs(ahat) ** 2))
        ahat *= heat
        a = ph * np.fft.ifft(ahat)
        if dissipation == "trapezoid":
            g_new = grad_sq(np.fft.fft(a))
            D += 0.5 * h * (g_prev + g_new)
            g_prev = g_new
        n = w_phys * float(np.vdot(a, a).real)
        t = grid[j]
        _check_finite(n, t)
        done = stop_below is not None and n <= stop_below * norm0
        if j % record_every == 0 or t in marks or j == grid.size - 1 or done:
            times.append(t)
            norms.append(n)
            diss.append(D)
        if done:
            break
    return ModeSolution(np.array(times), np.array(norms), np.array(diss), a,
                        problem.y, kappa)


# --------------------------------------------------------------------------
# radial modes


def radial_mesh(scale, kappa, t_end, cells_per_scale=64, r_max=None):
    """Cell faces on ``[0, R_max]``.

    ``4 * cells_per_scale`` cells uniform in ``sqrt(r)`` on ``[0, 2 scale]``,
    then uniform spacing ``scale / cells_per_scale`` out to
    ``R_max = 4 scale + 10 sqrt(2 kappa t_end)`` (at least ``8 scale``).  Every
    multiple of ``scale`` beyond ``2 scale`` is a face, so the kinks of the
    tent datum never fall inside a cell.
    """
    n = int(cells_per_scale)
    inner = 2.0 * scale
    if r_max is None:
        r_max = max(4.0 * scale + 10.0 * math.sqrt(2.0 * kappa * t_end), 8.0 * scale)
    n_outer = int(math.ceil((r_max - inner) / scale)) * n
    core = inner * (np.arange(4 * n + 1) / (4 * n)) ** 2
    outer = inner + scale * np.arange(1, n_outer + 1) / n
    return np.concatenate([core, outer])


@dataclass(frozen=True, eq=False)
class RadialModeProblem:
    """``a_t = -i m r^q a + kappa (a_rr + a_r / r - m^2 a / r^2)``.

    Finite volumes on the cells between ``faces``; no flux through ``r = 0``
    and homogeneous Dirichlet data at ``R_max = faces[-1]``.
    """

    m: int
    q: float
    kappa: float
    faces: np.ndarray
    scale: float

    def __post_init__(self):
        if self.m < 0:
            raise ParameterError("azimuthal wavenumber must be >= 0")
        if self.q < 1:
            raise ParameterError("q must be >= 1")
        if self.kappa < 0:
            raise ParameterError("kappa must be non-negative")
        f = np.asarray(self.faces, dtype=float)
        if f[0] != 0.0 or np.any(np.diff(f) <= 0):
            raise ParameterError("faces must start at 0 and increase")

    @classmethod
    def build(cls, q, kappa, t_end, m=1, scale=None, cells_per_scale=DEFAULT_CELLS,
              refine=1):
        """Graded mesh for a datum of half width ``scale`` (default ``kappa**(1/(q+2))``)."""
        field_q = q.q if isinstance(q, Circular) else q
        if scale is None:
            scale = kappa ** (1.0 / (field_q + 2.0))
        faces = radial_mesh(scale, kappa, t_end, cells_per_scale * refine)
        return cls(m, field_q, kappa, faces, scale)

    @property
    def centers(self):
        f = self.faces
        return 0.5 * (f[1:] + f[:-1])

    @property
    def volumes(self):
        f = self.faces
        return 0.5 * (f[1:] ** 2 - f[:-1] ** 2)

    @property
    def weight(self):
        return math.pi if self.m else TWO_PI

    def stiffness(self):
        """Banded (upper) form of the symmetric operator ``S`` with ``V a' = -S a``."""
        f = self.faces
        r = self.centers
        n = r.size
        c = np.zeros(n + 1)
        c[1:n] = self.kappa * f[1:n] / np.diff(r)
        c[n] = self.kappa * f[n] / (f[n] - r[-1])
        diag = c[:n] + c[1:] + self.kappa * self.m ** 2 * self.volumes / r ** 2
        off = -c[1:n]
        return diag, off

    def default_dt(self, t_end):
        r_act = min(self.faces[-1], 4.0 * self.scale + 3.0 * math.sqrt(2.0 * self.kappa * t_end))
        speed = max(self.m, 1) * r_act ** self.q
        return PHASE_BUDGET / speed


def circular_mode_profile(problem, datum):
    """Mode amplitude of ``phi(r - c) sin theta`` as exact ``r dr`` cell averages."""
    f = problem.faces
    lo, c, hi = datum.center - datum.half_width, datum.center, datum.center + datum.half_width

    def primitive(r):
        # int_0^r phi(s - c) s ds for the tent of half width w centred at c
        w = datum.half_width
        r = np.clip(r, lo, hi)
        rise = np.minimum(r, c)
        out = _tent_moment(lo, rise, lo, w, +1)
        fall = np.maximum(r, c)
        return out + _tent_moment(c, fall, hi, w, -1)

    avg = np.diff(primitive(f)) / problem.volumes
    return -1j * avg


def _tent_moment(a, b, anchor, w, sign):
    # int_a^b sign * (s - anchor) / w * s ds, with the linear piece vanishing at anchor
    def F(s):
        return sign * (s ** 3 / 3.0 - anchor * s ** 2 / 2.0) / w
    return np.where(b > a, F(b) - F(a), 0.0)


def _apply_sym(diag, off, a):
    out = diag * a
    out[:-1] += off * a[1:]
    out[1:] += off * a[:-1]
    return out


def solve_circular_mode(problem, a0, t_end, dt=None, record_times=(), record_every=1,
                        stop_below=None, dissipation="exact"):
    """Strang splitting: half rotation phase, Crank-Nicolson radial step, half phase.

    Raises :class:`ResolutionError` when fewer than 16 cells cover one datum
    scale at the inner edge of the support of ``a0``.
    """
    if dissipation not in ACCOUNTING:
        raise ParameterError(f"dissipation accounting must be one of {ACCOUNTING}")
    a = np.array(a0, dtype=complex)
    r = problem.centers
    if a.shape != r.shape:
        raise ParameterError("a0 must live on the radial mesh")
    support = np.flatnonzero(a != 0)
    if support.size:
        lo = r[support[0]]
        inside = np.count_nonzero((r >= lo) & (r <= lo + problem.scale))
        if inside < 16:
            raise ResolutionError(
                f"only {inside} cells across the datum scale {problem.scale:.3g}")
    if dt is None:
        dt = min(problem.default_dt(t_end), t_end / 100.0 if t_end > 0 else 1.0)
    if dt <= 0:
        raise ParameterError("dt must be positive")

    grid = _step_grid(t_end, dt, record_times)
    marks = set(np.asarray(record_times, float).tolist())
    V = problem.volumes
    diag, off = problem.stiffness()
    wgt = problem.weight
    phase_rate = problem.m * r ** problem.q
    cache = {}

    def factors(h):
        key = round(h, 15)
        if key not in cache:
            ab = np.zeros((2, r.size))
            ab[0, 1:] = 0.5 * h * off
            ab[1] = V + 0.5 * h * diag
            cache[key] = (np.exp(-0.5j * phase_rate * h), cholesky_banded(ab))
        return cache[key]

    def energy(v):
        return wgt * float(np.sum(V * np.abs(v) ** 2))

    def grad_sq(v):
        return wgt * float(np.vdot(v, _apply_sym(diag, off, v)).real)

    norm0 = energy(a)
    times, norms, diss = [0.0], [norm0], [0.0]
    D = 0.0
    for j in range(1, grid.size):
        h = grid[j] - grid[j - 1]
        ph, chol = factors(h)
        b = ph * a
        Sb = _apply_sym(diag, off, b)
        rhs = V * b - 0.5 * h * Sb
        b_new = cho_solve_banded((chol, False), rhs)
        if dissipation == "exact":
            D += h * grad_sq(0.5 * (b + b_new))
        else:
            D += 0.5 * h * (float(np.vdot(b, Sb).real) * wgt + grad_sq(b_new))
        a = ph * b_new
        n = energy(a)
        t = grid[j]
        _check_finite(n, t)
        done = stop_below is not None and n <= stop_below * norm0
        if j % record_every == 0 or t in marks or j == grid.size - 1 or done:
            times.append(t)
            norms.append(n)
            diss.append(D)
        if done:
            break
    return ModeSolution(np.array(times), np.array(norms), np.array(diss), a, r,
                        problem.kappa)


# --------------------------------------------------------------------------
# diagnostics


def energy_residual(solution):
    """``max_t |norm_sq(t)/2 + D(t) - norm_sq(0)/2| / (norm_sq(0)/2)``."""
    half0 = 0.5 * solution.norm_sq[0]
    if half0 == 0:
        return 0.0
    gap = 0.5 * solution.norm_sq + solution.dissipation - half0
    return float(np.max(np.abs(gap)) / half0)


def build_problem(field_, datum, t_end, k=1, delta=0, refine=1, cells_per_scale=DEFAULT_CELLS):
    """Mode problem matched to ``datum``: ``k = 1`` shear or ``m = 1`` radial."""
    if not isinstance(datum, InitialDatum):
        raise ParameterError("datum must be an InitialDatum")
    if isinstance(field_, Circular):
        return RadialModeProblem.build(field_.q, datum.kappa, t_end, m=k,
                                       scale=datum.half_width,
                                       cells_per_scale=cells_per_scale, refine=refine)
    return ShearModeProblem.from_field(field_, datum.kappa, k=k, delta=delta,
                                       scale=datum.half_width, refine=refine)


def solve_datum(field_, datum, t_end, dt=None, delta=0, refine=1, **kwargs):
    """Solve the single mode excited by ``datum`` up to ``t_end``."""
    problem = build_problem(field_, datum, t_end, delta=delta, refine=refine)
    if isinstance(problem, RadialModeProblem):
        return solve_circular_mode(problem, circular_mode_profile(problem, datum),
                                   t_end, dt, **kwargs)
    return solve_shear_mode(problem, shear_mode_profile(problem, datum), t_end, dt, **kwargs)


def decay_curve(problem, datum, t_end, dt=None, **kwargs):
    """Norm history of ``datum`` under ``problem`` as a :class:`DecayCurve`."""
    if isinstance(problem, RadialModeProblem):
        sol = solve_circular_mode(problem, circular_mode_profile(problem, datum),
                                  t_end, dt, **kwargs)
    else:
        sol = solve_shear_mode(problem, shear_mode_profile(problem, datum), t_end, dt,
                               **kwargs)
    return DecayCurve(datum.kappa, sol.times, sol.norm_sq,
                      {"kind": datum.kind, "beta": datum.beta, "center": datum.center})
