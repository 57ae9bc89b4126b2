"""Cumulative dissipation from the variance of the datum along stochastic trajectories.

For a velocity field ``u`` and datum ``rho0``,

    kappa int_0^t ||grad rho(s)||^2 ds = 1/2 int Var(rho0(X_{t,0}(x))) dx,

where ``X_{t,0}(x)`` is the backward trajectory from ``x``.  The variance is
estimated from an ensemble (``single``) or as ``E|f1 - f2|^2 / 2`` over
independent pairs (``paired``).

The endpoint law seen from ``(x, y)`` is the law from ``(0, y)`` shifted by
``x`` (and likewise in ``theta`` for circular flows), and the variance is a
trigonometric polynomial of degree 2 in ``x``.  An 8-point midpoint rule in
``x`` is therefore exact and every transverse node needs a single ensemble.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import CoverageError, ParameterError
from .flows import Circular, datum_norms
from .trajectories import SimParams, circular_paths, shear_paths

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
ANGULAR_NODES = 8
NODE_STRIDE = 1 << 32
ENVELOPE = 6.0


class Estimator(str, enum.Enum):
    SINGLE = "SingleCopy"
    PAIRED = "PairedCopy"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key in ("single", "singlecopy"):
            return cls.SINGLE
        if key in ("paired", "pairedcopy"):
            return cls.PAIRED
        raise ParameterError(f"unknown estimator {value!r}")


class Source(str, enum.Enum):
    FDR_MC = "FDR_MC"
    PDE = "PDE"


@dataclass(frozen=True)
class VarianceEstimate:
    point: tuple
    t: float
    variance: float
    standard_error: float
    M: int
    estimator: Estimator


@dataclass(frozen=True)
class DispersionBound:
    """Paired-copy dispersion bound on the variance at one point.

    ``value = gx * E|dX|^2 + gy * E|dY|^2`` with ``gx``, ``gy`` the squared sup
    norms of the datum's derivatives (``d/dtheta`` and ``d/dr`` for circular
    data).  Since ``|f1 - f2| <= sqrt(gx)|dX| + sqrt(gy)|dY|`` for every pair,
    ``value`` dominates the paired variance estimate sample by sample.
    """

    value: float
    standard_error: float
    mean_dx_sq: float
    mean_dy_sq: float
    paired_variance: float


# --------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class SpatialQuadrature:
    """Midpoint cells in the transverse coordinate, exact rule in x (or theta).

    ``weights[i]`` is the measure of the full cell ``T x [a_i, b_i]`` (or the
    annulus with ``r dr dtheta``), so the weights sum to the region measure.
    ``ids`` fix each node's random streams, so sub-quadratures reproduce the
    node variances of their parent exactly.
    """

    polar: bool
    nodes: np.ndarray
    weights: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ids: np.ndarray
    partial: bool = False

    @classmethod
    def from_faces(cls, faces, polar=False, ids=None):
        faces = np.asarray(faces, dtype=float)
        if faces.ndim != 1 or faces.size < 2 or np.any(np.diff(faces) <= 0):
            raise ParameterError("quadrature faces must be increasing")
        if polar and faces[0] < 0:
            raise ParameterError("polar faces must be non-negative")
        lo, hi = faces[:-1], faces[1:]
        if polar:
            weights = math.pi * (hi ** 2 - lo ** 2)
            nodes = 0.5 * (lo + hi)
        else:
            weights = TWO_PI * (hi - lo)
            nodes = 0.5 * (lo + hi)
        if ids is None:
            ids = np.arange(nodes.size)
        return cls(polar, nodes, weights, lo, hi, np.asarray(ids, dtype=np.int64))

    @property
    def measure(self):
        return float(np.sum(self.weights))

    def region_measure(self):
        """Measure of the union of cells, computed from the cell bounds."""
        if self.polar:
            return float(math.pi * np.sum(self.upper ** 2 - self.lower ** 2))
        return float(TWO_PI * np.sum(self.upper - self.lower))

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return SpatialQuadrature(self.polar, self.nodes[mask], self.weights[mask],
                                 self.lower[mask], self.upper[mask], self.ids[mask], True)

    def split(self, a, b):
        """``(inside, outside)`` for the band ``[a, b]``, cut at the nearest faces."""
        faces = np.concatenate([self.lower, self.upper[-1:]])
        a = faces[np.argmin(np.abs(faces - a))]
        b = faces[np.argmin(np.abs(faces - b))]
        inside = (self.lower >= a) & (self.upper <= b)
        return self.subset(inside), self.subset(~inside)

    def covers(self, lo, hi):
        return bool(self.lower.size) and self.lower.min() <= lo and self.upper.max() >= hi


def _graded_faces(start, stop, fine, cap, growth=1.25):
    """Faces from ``start`` to ``stop`` beginning at spacing ``fine``, growing to ``cap``."""
    faces = [start]
    h = fine
    sign = 1.0 if stop > start else -1.0
    while sign * (stop - faces[-1]) > 1e-12:
        h = min(h * growth, cap)
        nxt = faces[-1] + sign * h
        if sign * (stop - nxt) < 0.25 * h:
            nxt = stop
        faces.append(nxt)
    return np.array(faces)


def default_quadrature(datum, t_min, t_max, kappa=None, fine_per_scale=8):
    """Quadrature adapted to ``datum`` over the horizons ``[t_min, t_max]``.

    Cells of width ``w / fine_per_scale`` cover the datum support with a margin
    of one half width on each side; outside, widths grow geometrically (factor
    1.25) up to about half the smallest diffusive length, out to the
    envelope ``support + 6 sqrt(2 kappa t_max)``.  On the torus the region is
    clamped to one period.
    """
    kappa = datum.kappa if kappa is None else kappa
    w = datum.half_width
    fine = w / fine_per_scale
    spread = ENVELOPE * math.sqrt(2.0 * kappa * t_max)
    cap = max(fine, 0.5 * math.sqrt(2.0 * kappa * max(t_min, 0.0)))
    c = datum.center
    if datum.kind == "circular":
        inner_lo, inner_hi = max(c - 2 * w, 0.0), c + 2 * w
        core = inner_lo + fine * np.arange(int(round((inner_hi - inner_lo) / fine)) + 1)
        left = _graded_faces(inner_lo, 0.0, fine, cap)[::-1] if inner_lo > 0 else np.array([0.0])
        right = _graded_faces(inner_hi, c + w + spread, fine, cap) if spread > w else np.array([inner_hi])
        faces = np.unique(np.concatenate([left, core, right]))
        return SpatialQuadrature.from_faces(faces, polar=True)
    lo, hi = c - 2 * w, c + 2 * w
    core = lo + fine * np.arange(int(round((hi - lo) / fine)) + 1)
    reach = w + spread
    y_lo, y_hi = datum.domain.y_bounds
    if datum.domain.periodic_y:
        reach = min(reach, math.pi)
        left_end, right_end = c - reach, c + reach
    else:
        left_end, right_end = max(c - reach, y_lo), min(c + reach, y_hi)
    left = _graded_faces(lo, left_end, fine, cap)[::-1] if left_end < lo else np.array([lo])
    right = _graded_faces(hi, right_end, fine, cap) if right_end > hi else np.array([hi])
    faces = np.unique(np.concatenate([left, core, right]))
    return SpatialQuadrature.from_faces(faces)


# --------------------------------------------------------------------------
# endpoint values of the datum


def _endpoints(field_, params, coord, streams, times):
    """Endpoint offsets ``(d_angle, transverse)`` of shape ``(n_times, P)``."""
    if isinstance(field_, Circular):
        R, T = circular_paths(coord, 0.0, streams, field_, params, times)
        return T, R
    I, V, B = shear_paths(coord, streams, field_, params, times)
    c = math.sqrt(2.0 * params.kappa)
    return params.delta * c * B - I, coord + c * V


def _angular_nodes():
    return TWO_PI * (np.arange(ANGULAR_NODES) + 0.5) / ANGULAR_NODES


def _datum_values(datum, angle_shift, transverse, angles):
    """``rho0`` at endpoints for every angular start node: ``(..., n_angles, P)``."""
    prof = datum.profile(transverse)
    ang = np.mod(angles[:, None] + angle_shift[..., None, :], TWO_PI)
    return prof[..., None, :] * np.sin(ang)


def _node_statistics(values, estimator):
    """Angular-mean variance and its standard error from ``values`` (n_t, n_ang, P)."""
    if estimator is Estimator.PAIRED:
        M = values.shape[-1] // 2
        f1, f2 = values[..., :M], values[..., M:2 * M]
        contrib = 0.5 * np.mean((f1 - f2) ** 2, axis=-2)
        var = contrib.mean(axis=-1)
        se = contrib.std(axis=-1, ddof=1) / math.sqrt(M)
        return var, se, M
    M = values.shape[-1]
    g = values - values[..., :1]
    dev = g - g.mean(axis=-1, keepdims=True)
    s2 = np.sum(dev ** 2, axis=-1) / (M - 1)
    var = s2.mean(axis=-1)
    infl = np.mean(dev ** 2 - s2[..., None], axis=-2)
    se = infl.std(axis=-1, ddof=1) / math.sqrt(M)
    return var, se, M


def _streams_for(node_id, count, stream_base):
    return rng.stream_ids(stream_base + int(node_id) * NODE_STRIDE, count)


def _as_times(params, times):
    single = times is None
    ts = np.atleast_1d(np.asarray([params.t] if single else times, dtype=float))
    if np.any(np.diff(ts) <= 0):
        raise ParameterError("times must be increasing")
    return ts, single


# --------------------------------------------------------------------------
# pointwise estimates


def pointwise_variance(datum, point, field_, params, estimator="paired", times=None,
                       stream_base=0):
    """Variance of ``rho0`` at the endpoints of trajectories started at ``point``.

    ``single`` uses the unbiased sample variance of ``M`` endpoints;
    ``paired`` averages ``|f1 - f2|^2 / 2`` over ``M`` independent pairs.
    With ``times`` a list of estimates, one per time, is returned.
    """
    est = Estimator.parse(estimator)
    if params.M < 100:
        raise ParameterError("pointwise variance needs M >= 100")
    ts, single = _as_times(params, times)
    a, b = point
    count = 2 * params.M if est is Estimator.PAIRED else params.M
    streams = rng.stream_ids(stream_base, count)
    shift, trans = _endpoints(field_, params, b if not isinstance(field_, Circular) else a,
                              streams, ts)
    angle = a if not isinstance(field_, Circular) else b
    vals = _values_at(datum, field_, shift, trans, np.array([angle]))
    var, se, M = _node_statistics(vals, est)
    out = [VarianceEstimate(tuple(point), float(t), float(v), float(s), M, est)
           for t, v, s in zip(ts, var, se)]
    return out[0] if single else out


def _values_at(datum, field_, shift, trans, angles):
    if callable(datum) and not hasattr(datum, "profile"):
        # plain callable data: evaluate directly at (angle + shift, transverse)
        ang = angles[:, None] + shift[..., None, :]
        tr = np.broadcast_to(trans[..., None, :], ang.shape)
        if isinstance(field_, Circular):
            return np.asarray(datum(tr, np.mod(ang, TWO_PI)), dtype=float)
        return np.asarray(datum(ang, tr), dtype=float)
    return _datum_values(datum, shift, trans, angles)


def paired_dispersion_bound(datum, point, field_, params, stream_base=0, norms=None):
    """Paired dispersion bound on the variance at ``point``; see :class:`DispersionBound`."""
    if params.M < 2:
        raise ParameterError("paired bound needs M >= 2")
    norms = datum_norms(datum) if norms is None else norms
    a, b = point
    polar = isinstance(field_, Circular)
    streams = rng.stream_ids(stream_base, 2 * params.M)
    shift, trans = _endpoints(field_, params, a if polar else b, streams, [params.t])
    shift, trans = shift[0], trans[0]
    M = params.M
    dx2 = (shift[:M] - shift[M:]) ** 2
    dy2 = (trans[:M] - trans[M:]) ** 2
    contrib = norms.grad_x_inf_sq * dx2 + norms.grad_y_inf_sq * dy2
    angle = b if polar else a
    vals = _values_at(datum, field_, shift[None], trans[None], np.array([angle]))[0, 0]
    pv = 0.5 * np.mean((vals[:M] - vals[M:]) ** 2)
    return DispersionBound(float(contrib.mean()), float(contrib.std(ddof=1) / math.sqrt(M)),
                           float(dx2.mean()), float(dy2.mean()), float(pv))


# --------------------------------------------------------------------------
# integrated estimates


@dataclass(frozen=True)
class IntegratedVariance:
    """``1/2 int Var`` at each time with its propagated standard error."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    node_variance: np.ndarray
    node_stderr: np.ndarray


def node_variances(datum, field_, params, quadrature, times, estimator="paired",
                   stream_base=0):
    """Angular-mean variance and standard error at every node, shape ``(n_times, n_nodes)``."""
    est = Estimator.parse(estimator)
    ts = np.asarray(times, dtype=float)
    count = 2 * params.M if est is Estimator.PAIRED else params.M
    n = quadrature.nodes.size
    var = np.empty((ts.size, n))
    se = np.empty((ts.size, n))
    angles = _angular_nodes()
    # batch nodes so that each kernel call sees enough paths to vectorise well
    per_batch = max(1, (1 << 17) // count)
    for lo in range(0, n, per_batch):
        idx = np.arange(lo, min(n, lo + per_batch))
        streams = np.concatenate([_streams_for(quadrature.ids[i], count, stream_base)
                                  for i in idx])
        coords = np.repeat(quadrature.nodes[idx], count)
        shift, trans = _endpoints(field_, params, coords, streams, ts)
        for k, i in enumerate(idx):
            sl = slice(k * count, (k + 1) * count)
            vals = _values_at(datum, field_, shift[:, sl], trans[:, sl], angles)
            var[:, i], se[:, i], _ = _node_statistics(vals, est)
    return var, se


def integrate_variance(datum, field_, params, quadrature=None, estimator="paired",
                       times=None, stream_base=0):
    """``1/2 sum_i w_i Var_i`` with standard error ``1/2 sqrt(sum_i (w_i SE_i)^2)``.

    Raises :class:`CoverageError` when a full (not split) quadrature misses
    part of the datum support.
    """
    ts, single = _as_times(params, times)
    if quadrature is None:
        quadrature = default_quadrature(datum, ts[ts > 0].min() if np.any(ts > 0) else 0.0,
                                        ts.max(), params.kappa)
    if hasattr(datum, "support") and not quadrature.partial:
        lo, hi = datum.support
        if datum.kind == "circular":
            lo = max(lo, 0.0)
        elif datum.domain.periodic_y and hi - lo >= TWO_PI:
            lo, hi = datum.center - math.pi, datum.center + math.pi
        if not quadrature.covers(lo, hi):
            raise CoverageError(
                f"quadrature [{quadrature.lower.min():.4g}, {quadrature.upper.max():.4g}] "
                f"misses the datum support [{lo:.4g}, {hi:.4g}]")
    var, se = node_variances(datum, field_, params, quadrature, ts, estimator, stream_base)
    w = quadrature.weights
    values = 0.5 * _pairwise_sum(var * w)
    stderr = 0.5 * np.sqrt(_pairwise_sum((se * w) ** 2))
    result = IntegratedVariance(ts, values, stderr, var, se)
    if single:
        return float(values[0]), float(stderr[0])
    return result


def _pairwise_sum(a):
    # numpy's sum along the last axis is a pairwise reduction; kept explicit
    # here so the reduction order never depends on how nodes were batched
    return np.sum(np.ascontiguousarray(a), axis=-1)


@dataclass(frozen=True, eq=False)
class DissipationCurve:
    """Cumulative dissipation ``D(t)`` with per-time standard errors."""

    kappa: float
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    source: Source = Source.FDR_MC

    def __post_init__(self):
        for name in ("times", "values", "stderr"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.times) <= 0):
            raise ParameterError("times must be increasing")
        if np.any(self.values < 0):
            raise ParameterError("dissipation must be non-negative")

    def is_monotone(self, k=2.0):
        """Nondecreasing within ``k`` combined standard errors."""
        drop = self.values[:-1] - self.values[1:]
        tol = k * np.hypot(self.stderr[:-1], self.stderr[1:])
        return bool(np.all(drop <= tol + 1e-15))


def dissipation_curve(datum, field_, params, times, quadrature=None, estimator="paired",
                      stream_base=0):
    """``D(t)`` at every time from one set of trajectories snapshotted at ``times``."""
    ts = np.atleast_1d(np.asarray(times, dtype=float))
    if ts.size == 0 or np.any(np.diff(ts) <= 0):
        raise ParameterError("times must be a non-empty increasing sequence")
    if np.all(ts == 0):
        return DissipationCurve(params.kappa, ts, np.zeros(ts.size), np.zeros(ts.size))
    res = integrate_variance(datum, field_, params, quadrature, estimator, ts, stream_base)
    return DissipationCurve(params.kappa, ts, res.values, res.stderr, Source.FDR_MC)


def pde_curve(solution):
    """Dissipation curve of a deterministic mode solution."""
    return DissipationCurve(solution.kappa, solution.times, solution.dissipation,
                            np.zeros(solution.times.size), Source.PDE)


def sim_params_for(kappa, times, M, delta=0, h=None, master_seed=0):
    """SimParams whose horizon is the largest requested time."""
    return SimParams(kappa=kappa, delta=delta, t=float(np.max(times)), h=h, M=M,
                     master_seed=master_seed)
