"""Backward stochastic trajectories, sampled through forward processes with the same law.

For a shear flow the endpoint of the backward flow started at ``(x, y)`` at time
``t`` is

    X = x + delta * sqrt(2 kappa) B_0 - int_0^t u(y + sqrt(2 kappa) W_tau) dtau,
    Y = y + sqrt(2 kappa) W_0,

with ``W`` and ``B`` Brownian motions pinned at ``W_t = B_t = 0``.  Writing
``W_s = V_{t-s}`` for a forward motion ``V`` turns the integral into one over
``V`` on ``[0, t]``, so a single forward path can be snapshotted at several
horizons.  Circular flows have no closed form; the polar system

    dR = (kappa / R) dtau + sqrt(2 kappa) dW,
    dTheta = -R**q dtau + (sqrt(2 kappa) / R) dB

is integrated by Euler-Maruyama.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import rng
from .errors import IntegrationError, ParameterError
from .flows import Circular, is_shear

logger = logging.getLogger(__name__)

MAX_REFINEMENTS = 20
# a circular step is refined unless kappa * h <= LOCAL_SCALE * R**2 at its start
LOCAL_SCALE = 0.05
CHUNK_PATHS = 1 << 15
STEP_BLOCK = 64


@dataclass(frozen=True)
class SimParams:
    """Simulation parameters.

    ``h`` defaults to ``t / 2000`` for shear flows; circular flows use
    :func:`default_circular_step` when ``h`` is ``None``.
    """

    kappa: float
    delta: int = 0
    t: float = 1.0
    h: float | None = None
    M: int = 1000
    master_seed: int = 0

    def __post_init__(self):
        if self.kappa < 0:
            raise ParameterError("kappa must be non-negative")
        if self.delta not in (0, 1):
            raise ParameterError("delta must be 0 or 1")
        if self.t < 0:
            raise ParameterError("horizon t must be non-negative")
        if self.h is not None and (self.h <= 0 or (self.t > 0 and self.h > self.t)):
            raise ParameterError("need 0 < h <= t")
        if self.M < 2:
            raise ParameterError("ensemble size M must be >= 2")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ParameterError("master_seed must be a 64-bit unsigned integer")

    def step(self, field_=None):
        if self.h is not None:
            return self.h
        if isinstance(field_, Circular):
            return default_circular_step(self.kappa, self.t, field_.q)
        return self.t / 2000.0 if self.t > 0 else 1.0


def default_circular_step(kappa, t, q):
    """``min(t/200, kappa**(2 beta) / (10 kappa))`` with ``beta = 1/(q+2)``."""
    base = t / 200.0 if t > 0 else 1.0
    if kappa <= 0:
        return base
    beta = 1.0 / (q + 2.0)
    return min(base, kappa ** (2 * beta) / (10 * kappa))


def time_grid(t, h, extra=()):
    """Uniform grid of spacing ``h`` on ``[0, t]`` merged with ``extra`` times.

    The last step may be short.  Returned times are strictly increasing and
    start at 0.
    """
    n = int(math.floor(t / h + 1e-9))
    pts = [np.arange(n + 1) * h, np.asarray(extra, dtype=float), [t]]
    grid = np.unique(np.concatenate(pts))
    grid = grid[(grid >= 0) & (grid <= t)]
    # merge near-duplicates produced by floating point multiples of h
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * max(t, 1.0)])
    grid = grid[keep]
    for e in np.atleast_1d(extra):
        grid[np.argmin(np.abs(grid - e))] = e
    return grid


def _snap_indices(grid, times):
    idx = np.searchsorted(grid, times)
    idx = np.clip(idx, 0, grid.size - 1)
    if not np.allclose(grid[idx], times, rtol=0, atol=1e-12 * max(grid[-1], 1.0)):
        raise ParameterError("snapshot times missing from the time grid")
    return idx


# --------------------------------------------------------------------------
# Brownian paths


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Time-reversed Brownian motion on ``[0, t]`` with ``W_t = 0``."""

    t: float
    h: float
    times: np.ndarray
    values: np.ndarray
    master_seed: int
    stream: int


def _forward_increments(master_seed, streams, grid, start=0):
    dt = np.diff(grid)
    z = rng.normals(master_seed, streams, start, dt.size)
    return z * np.sqrt(dt)[:, None]


def reversed_brownian_paths(t, h, streams, master_seed=0):
    """Vectorised :func:`sample_reversed_brownian`.

    Returns ``(times, values)`` with ``values[i]`` the path of ``streams[i]``.
    """
    grid = time_grid(t, h)
    streams = np.asarray(streams, dtype=np.uint64)
    v = np.zeros((grid.size, streams.size))
    if grid.size > 1:
        np.cumsum(_forward_increments(master_seed, streams, grid), axis=0, out=v[1:])
    times = t - grid[::-1]
    times[0] = 0.0
    return times, v[::-1].T.copy()


def sample_reversed_brownian(t, h, stream, master_seed=0):
    """One time-reversed Brownian path pinned at ``W_t = 0``.

    A forward path ``V`` is built from independent Gaussian increments and
    reversed, ``W_s = V_{t-s}``.
    """
    times, values = reversed_brownian_paths(t, h, [stream], master_seed)
    return BrownianPath(t, h, times, values[0], master_seed, int(stream))


# --------------------------------------------------------------------------
# endpoints


@dataclass(frozen=True, eq=False)
class EndpointSample:
    """Endpoints at ``s = 0``; shape ``(M,)`` or ``(n_times, M)`` with snapshots."""

    first: np.ndarray
    second: np.ndarray
    polar: bool = False

    @property
    def X(self):
        return self.first

    @property
    def Y(self):
        return self.second

    @property
    def R(self):
        return self.first

    @property
    def Theta(self):
        return self.second


def _shear_kernel(y, streams, speed, kappa, delta, grid, snaps, master_seed):
    """Forward in-law integration for a batch of paths.

    Returns ``(I, V, B)`` at the snapshot indices, each ``(n_snaps, P)``:
    the velocity integral, the forward transverse motion, and the forward
    streamwise motion (zeros when ``delta = 0``).
    """
    P = y.size
    S = snaps.size
    I_out = np.empty((S, P))
    V_out = np.empty((S, P))
    B_out = np.zeros((S, P))
    c = math.sqrt(2.0 * kappa)
    dt = np.diff(grid)
    sq = np.sqrt(dt)
    n_steps = dt.size

    V = np.zeros(P)
    I = np.zeros(P)
    u_prev = speed(y)
    snap_pos = 0
    while snap_pos < S and snaps[snap_pos] == 0:
        I_out[snap_pos] = 0.0
        V_out[snap_pos] = 0.0
        snap_pos += 1

    for block_start in range(0, n_steps, STEP_BLOCK):
        nb = min(STEP_BLOCK, n_steps - block_start)
        z = rng.normals(master_seed, streams, block_start, nb)
        for k in range(nb):
            j = block_start + k
            V += sq[j] * z[k]
            u_new = speed(y + c * V)
            I += 0.5 * dt[j] * (u_prev + u_new)
            u_prev = u_new
            while snap_pos < S and snaps[snap_pos] == j + 1:
                I_out[snap_pos] = I
                V_out[snap_pos] = V
                snap_pos += 1

    if delta:
        snap_times = grid[snaps]
        gaps = np.diff(np.concatenate([[0.0], snap_times]))
        zb = rng.normals(master_seed, streams, 0, S, rng.DOMAIN_AUX)
        B_out = np.cumsum(zb * np.sqrt(gaps)[:, None], axis=0)
    return I_out, V_out, B_out


def shear_paths(y, streams, field_, params, times):
    """Velocity integrals and forward motions at each of ``times``.

    ``y`` and ``streams`` are broadcast to a common 1-D shape, so several
    start points can share one call.  Returns ``(I, V, B)`` arrays of shape
    ``(len(times), P)``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    streams = np.asarray(streams, dtype=np.uint64).ravel()
    y = np.broadcast_to(np.asarray(y, dtype=float), streams.shape).astype(float)
    t_max = float(times.max()) if times.size else 0.0
    h = params.h if params.h is not None else (t_max / 2000.0 if t_max > 0 else 1.0)
    grid = time_grid(t_max, h, times) if t_max > 0 else np.array([0.0])
    snaps = _snap_indices(grid, times)
    order = np.argsort(snaps, kind="stable")
    out = [np.empty((times.size, streams.size)) for _ in range(3)]
    for lo in range(0, streams.size, CHUNK_PATHS):
        sl = slice(lo, lo + CHUNK_PATHS)
        res = _shear_kernel(y[sl], streams[sl], field_.speed, params.kappa,
                            params.delta, grid, snaps[order], params.master_seed)
        for dst, src in zip(out, res):
            dst[order, sl] = src
    return tuple(out)


def shear_endpoint(x, y, field_, params, streams=None, times=None):
    """Endpoints of the backward shear flow from ``(x, y)``.

    The velocity integral uses the trapezoidal rule on the path grid.  With
    ``times`` the same paths are snapshotted at every horizon and the arrays
    gain a leading time axis; otherwise the horizon is ``params.t``.
    """
    if not is_shear(field_):
        raise ParameterError("shear_endpoint needs a shear field")
    field_.domain.check(y)
    if streams is None:
        streams = rng.stream_ids(0, params.M)
    single = times is None
    ts = [params.t] if single else times
    I, V, B = shear_paths(y, streams, field_, params, ts)
    c = math.sqrt(2.0 * params.kappa)
    X = x + params.delta * c * B - I
    Y = y + c * V
    if single:
        X, Y = X[0], Y[0]
    return EndpointSample(X, Y)


@nb.njit(cache=True)
def _circular_step(R, T, h, dW, dB, kappa, q, seed, stream, step, tau0,
                   local_scale, max_ref):
    """One Euler-Maruyama step with Brownian-bridge refinement.

    A (sub)step is accepted when it keeps ``R > 0`` and resolves the local
    time scale, ``kappa * h <= local_scale * R**2``.  Otherwise its driving
    increments are split by a Brownian bridge and both halves are retried, up
    to ``max_ref`` levels; past that a negative radius is reflected.  Returns
    ``(R, Theta, failed_tau)`` with ``failed_tau`` NaN on success.
    """
    c = np.sqrt(2.0 * kappa)
    size = 2 * max_ref + 4
    s_h = np.empty(size)
    s_dw = np.empty(size)
    s_db = np.empty(size)
    s_tau = np.empty(size)
    s_depth = np.empty(size, dtype=np.int64)
    s_node = np.empty(size, dtype=np.int64)
    top = 0
    s_h[0] = h
    s_dw[0] = dW
    s_db[0] = dB
    s_tau[0] = tau0
    s_depth[0] = 0
    s_node[0] = 1
    top = 1
    while top > 0:
        top -= 1
        hh = s_h[top]
        dw = s_dw[top]
        db = s_db[top]
        depth = s_depth[top]
        node = s_node[top]
        tau = s_tau[top]
        Rn = R + kappa / R * hh + c * dw
        Tn = T - R ** q * hh + c / R * db
        if (Rn > 0.0 and kappa * hh <= local_scale * R * R) or depth >= max_ref:
            Rn = abs(Rn)
            if not (Rn > 0.0 and np.isfinite(Rn) and np.isfinite(Tn)):
                return R, T, tau
            R = Rn
            T = Tn
            continue
        draw = ((step << 22) | node) * 2
        x1, x2 = rng.normal_pair(seed, stream, rng.DOMAIN_REFINE, draw)
        half = 0.5 * hh
        dw1 = 0.5 * dw + 0.5 * np.sqrt(hh) * x1
        db1 = 0.5 * db + 0.5 * np.sqrt(hh) * x2
        # second half below the first so the first is processed next
        s_h[top] = half
        s_dw[top] = dw - dw1
        s_db[top] = db - db1
        s_tau[top] = tau + half
        s_depth[top] = depth + 1
        s_node[top] = 2 * node + 1
        s_h[top + 1] = half
        s_dw[top + 1] = dw1
        s_db[top + 1] = db1
        s_tau[top + 1] = tau
        s_depth[top + 1] = depth + 1
        s_node[top + 1] = 2 * node
        top += 2
    return R, T, np.nan


@nb.njit(cache=True, parallel=True)
def _circular_kernel(r, theta, streams, q, kappa, grid, snaps, seed,
                     local_scale, max_ref, R_out, T_out, fail_tau):
    P = r.size
    S = snaps.size
    n_steps = grid.size - 1
    c = np.sqrt(2.0 * kappa)
    for i in nb.prange(P):
        R = r[i]
        T = theta[i]
        stream = streams[i]
        fail_tau[i] = np.nan
        pos = 0
        while pos < S and snaps[pos] == 0:
            R_out[pos, i] = R
            T_out[pos, i] = T
            pos += 1
        for j in range(n_steps):
            h = grid[j + 1] - grid[j]
            sq = np.sqrt(h)
            z0, z1 = rng.normal_pair(seed, stream, rng.DOMAIN_PATH, 2 * j)
            dW = sq * z0
            dB = sq * z1
            Rn = R + kappa / R * h + c * dW
            if Rn > 0.0 and kappa * h <= local_scale * R * R:
                T = T - R ** q * h + c / R * dB
                R = Rn
            else:
                R, T, ft = _circular_step(R, T, h, dW, dB, kappa, q, seed, stream,
                                          j, grid[j], local_scale, max_ref)
                if not np.isnan(ft):
                    fail_tau[i] = ft
                    break
            while pos < S and snaps[pos] == j + 1:
                R_out[pos, i] = R
                T_out[pos, i] = T
                pos += 1


def circular_paths(r, theta, streams, field_, params, times):
    """Polar endpoints at each of ``times``; arrays of shape ``(len(times), P)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    streams = np.asarray(streams, dtype=np.uint64).ravel()
    r = np.broadcast_to(np.asarray(r, dtype=float), streams.shape)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), streams.shape)
    if np.any(r <= 0):
        raise ParameterError("circular trajectories need r > 0")
    t_max = float(times.max()) if times.size else 0.0
    h = params.h if params.h is not None else default_circular_step(
        params.kappa, t_max, field_.q)
    grid = time_grid(t_max, h, times) if t_max > 0 else np.array([0.0])
    snaps = _snap_indices(grid, times)
    order = np.argsort(snaps, kind="stable")
    R_all = np.empty((times.size, streams.size))
    T_all = np.empty((times.size, streams.size))
    fail = np.empty(streams.size)
    R_s = np.empty_like(R_all)
    T_s = np.empty_like(T_all)
    _circular_kernel(np.ascontiguousarray(r), np.ascontiguousarray(theta), streams,
                     float(field_.q), float(params.kappa), grid,
                     np.ascontiguousarray(snaps[order]), np.uint64(params.master_seed),
                     LOCAL_SCALE, MAX_REFINEMENTS, R_s, T_s, fail)
    bad = np.flatnonzero(np.isfinite(fail))
    if bad.size:
        tau = float(fail[bad].min())
        raise IntegrationError(
            f"radius collapsed for {bad.size} circular path(s), first at tau={tau:.6g}",
            tau=tau)
    R_all[order] = R_s
    T_all[order] = T_s
    return R_all, T_all


def circular_endpoint(r, theta, q, params, streams=None, times=None):
    """Law of ``(R_{t,0}, Theta_{t,0})`` for the circular flow ``r**q``.

    ``Theta`` is returned unreduced so angular dispersion can be measured.
    """
    field_ = q if isinstance(q, Circular) else Circular(q)
    if r <= 0:
        raise ParameterError("circular trajectories need r > 0")
    if streams is None:
        streams = rng.stream_ids(0, params.M)
    single = times is None
    R, T = circular_paths(r, theta, streams, field_, params,
                          [params.t] if single else times)
    if single:
        R, T = R[0], T[0]
    return EndpointSample(R, T, polar=True)


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    start: tuple
    params: SimParams
    samples: EndpointSample
    streams: np.ndarray

    @property
    def size(self):
        return self.streams.size


def build_ensemble(start, field_, params, stream_base=0):
    """``params.M`` endpoint samples from ``start`` with streams ``stream_base + i``.

    Each sample depends only on ``(master_seed, stream)``, so the result does
    not depend on how the work is chunked or ordered.
    """
    streams = rng.stream_ids(stream_base, params.M)
    a, b = start
    if isinstance(field_, Circular):
        samples = circular_endpoint(a, b, field_, params, streams)
    else:
        samples = shear_endpoint(a, b, field_, params, streams)
    return TrajectoryEnsemble(tuple(start), params, samples, streams)
