"""Low-resolution snapshots of a scalar stirred by a shear and by a circular flow."""

from __future__ import annotations

import math

import numpy as np

from .flows import Circular, CriticalShear, SinPower, make_initial_datum
from .spectral import (
    RadialModeProblem, ShearModeProblem, circular_mode_profile, shear_mode_profile,
    solve_circular_mode, solve_shear_mode,
)

PANEL = 150
GAP = 10


def _snapshots(solve, a0, times):
    frames, a, t_prev = [], a0, 0.0
    for t in times:
        if t > t_prev:
            a = solve(a, t - t_prev).final
        frames.append(a.copy())
        t_prev = t
    return frames


def shear_frames(kappa, fractions, resolution):
    field_ = CriticalShear(SinPower(1))
    datum = make_initial_datum(field_, kappa)
    problem = ShearModeProblem.from_field(field_, kappa, scale=datum.half_width)
    times = [f * kappa ** -0.5 for f in fractions]
    frames = _snapshots(lambda a, dt: solve_shear_mode(problem, a, dt),
                        shear_mode_profile(problem, datum), times)
    w, c = datum.half_width, datum.center
    x = np.linspace(0.0, 2 * math.pi, resolution)
    y = np.linspace(c - 3 * w, c + 3 * w, resolution)
    out = []
    for a in frames:
        re = np.interp(y, problem.y, a.real)
        im = np.interp(y, problem.y, a.imag)
        # rows are y, columns are x
        out.append(re[:, None] * np.cos(x)[None, :] - im[:, None] * np.sin(x)[None, :])
    return times, out


def circular_frames(kappa, fractions, resolution, q=2.0):
    datum = make_initial_datum(Circular(q), kappa)
    times = [f * kappa ** (-q / (q + 2.0)) for f in fractions]
    problem = RadialModeProblem.build(q, kappa, max(times), scale=datum.half_width,
                                      cells_per_scale=32)
    frames = _snapshots(lambda a, dt: solve_circular_mode(problem, a, dt),
                        circular_mode_profile(problem, datum), times)
    reach = 5 * datum.half_width
    s = np.linspace(-reach, reach, resolution)
    X, Y = np.meshgrid(s, s)
    R, T = np.hypot(X, Y), np.arctan2(Y, X)
    out = []
    for a in frames:
        re = np.interp(R, problem.centers, a.real, right=0.0)
        im = np.interp(R, problem.centers, a.imag, right=0.0)
        out.append(re * np.cos(T) - im * np.sin(T))
    return times, out


def _color(v):
    # blue-white-red diverging map on [-1, 1]
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        g = int(255 * (1 - v))
        return f"#ff{g:02x}{g:02x}"
    g = int(255 * (1 + v))
    return f"#{g:02x}{g:02x}ff"


def _panel(field, x0, y0):
    n_rows, n_cols = field.shape
    cw, ch = PANEL / n_cols, PANEL / n_rows
    scale = max(float(np.max(np.abs(field))), 1e-300)
    cells = []
    for i in range(n_rows):
        for j in range(n_cols):
            cells.append(f'<rect x="{x0 + j * cw:.2f}" y="{y0 + (n_rows - 1 - i) * ch:.2f}" '
                         f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" '
                         f'fill="{_color(field[i, j] / scale)}"/>')
    return cells


def demo_figure(kappa=1e-3, resolution=40, fractions=(0.0, 0.5, 2.0, 8.0)):
    """SVG with shear snapshots on the top row and circular snapshots below.

    Each panel is normalised by its own maximum, so the thinning of the
    filaments is visible even after most of the variance has dissipated.
    """
    rows = [("shear u = sin y", *shear_frames(kappa, fractions, resolution)),
            ("circular q = 2", *circular_frames(kappa, fractions, resolution))]
    width = len(fractions) * (PANEL + GAP) + GAP
    height = len(rows) * (PANEL + 3 * GAP) + GAP
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    for r, (label, times, frames) in enumerate(rows):
        y0 = GAP + r * (PANEL + 3 * GAP) + 2 * GAP
        for c, (t, f) in enumerate(zip(times, frames)):
            x0 = GAP + c * (PANEL + GAP)
            parts.extend(_panel(f, x0, y0))
            parts.append(f'<text x="{x0}" y="{y0 - 4}" font-size="10">{label}, t={t:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
