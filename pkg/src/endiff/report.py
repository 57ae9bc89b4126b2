"""Run reports and their on-disk artifacts: CSV curves, ``rates.json`` and an SVG summary."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DECAY_HEADER = "t,norm_sq,dissipation"
FDR_HEADER = "t,D_mc,stderr"


@dataclass
class KappaResult:
    """Everything measured at one diffusivity; unset stages stay ``None``."""

    kappa: float
    pde_times: np.ndarray | None = None
    norm_sq: np.ndarray | None = None
    dissipation: np.ndarray | None = None
    t_end: float | None = None
    t_mix: float | None = None
    energy_residual: float | None = None
    fdr: object | None = None  # fdr.DissipationCurve
    max_rel_gap: float | None = None
    c_fit: float | None = None
    trajectories: dict | None = None

    def summary(self):
        return {"kappa": self.kappa, "t_end": self.t_end, "t_mix": self.t_mix,
                "energy_residual": self.energy_residual,
                "max_rel_gap": self.max_rel_gap, "c_fit": self.c_fit,
                "trajectories": self.trajectories}


@dataclass
class RunReport:
    config: object  # config.ExperimentConfig
    results: list = field(default_factory=list)
    rate_fit: object | None = None
    bound_check: object | None = None
    sharpness: object | None = None
    theoretical_exponent: float | None = None
    wall_clock: float = 0.0
    versions: dict = field(default_factory=dict)
    partial: bool = False
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config": self.config.to_dict() if self.config is not None else None,
            "results": [r.summary() for r in self.results],
            "rate_fit": _maybe_dict(self.rate_fit),
            "bound_check": _maybe_dict(self.bound_check),
            "sharpness": _maybe_dict(self.sharpness),
            "theoretical_exponent": self.theoretical_exponent,
            "wall_clock": self.wall_clock,
            "versions": self.versions,
            "seeds": {"master_seed": self.config.seed} if self.config is not None else None,
            "partial": self.partial,
            "failures": self.failures,
        }


def _maybe_dict(obj):
    return None if obj is None else obj.to_dict()


def fmt(value):
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(value))


def kappa_tag(kappa):
    return fmt(kappa)


def _clean(obj):
    # JSON has no inf/nan; map them to null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def csv_text(header, columns):
    lines = [header]
    for row in zip(*columns):
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Header and float columns of a CSV written by :func:`csv_text`."""
    text = Path(path).read_text(encoding="utf-8")
    rows = text.strip("\n").split("\n")
    header = rows[0]
    data = np.array([[float(x) for x in r.split(",")] for r in rows[1:]]).reshape(
        len(rows) - 1, len(header.split(",")))
    return header, data.T


def planned_files(report):
    names = []
    for r in report.results:
        if r.pde_times is not None:
            names.append(f"decay_{kappa_tag(r.kappa)}.csv")
        if r.fdr is not None:
            names.append(f"fdr_{kappa_tag(r.kappa)}.csv")
    names.append("rates.json")
    if report.results:
        names.append("summary.svg")
    return names


def emit_outputs(report, directory, force=False):
    """Write the report's artifacts into ``directory`` and return their paths.

    Existing files are never replaced unless ``force`` is set; the check runs
    before anything is written.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    targets = [out / name for name in planned_files(report)]
    if not force:
        clash = [str(p) for p in targets if p.exists()]
        if clash:
            raise FileExistsError(f"refusing to overwrite {', '.join(clash)} (use --force)")
    written = []
    for r in report.results:
        tag = kappa_tag(r.kappa)
        if r.pde_times is not None:
            written.append(_write(out / f"decay_{tag}.csv", csv_text(
                DECAY_HEADER, (r.pde_times, r.norm_sq, r.dissipation))))
        if r.fdr is not None:
            written.append(_write(out / f"fdr_{tag}.csv", csv_text(
                FDR_HEADER, (r.fdr.times, r.fdr.values, r.fdr.stderr))))
    body = json.dumps(_clean(report.to_dict()), indent=2, allow_nan=False)
    written.append(_write(out / "rates.json", body + "\n"))
    if report.results:
        written.append(_write(out / "summary.svg", summary_svg(report)))
    logger.info("wrote %d files to %s", len(written), out)
    return written


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# --------------------------------------------------------------------------
# svg


WIDTH, HEIGHT, MARGIN = 480, 360, 60


def _decades(lo, hi):
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def summary_svg(report):
    """Log-log plot of ``t_mix`` against ``kappa`` with a reference slope."""
    pts = [(r.kappa, r.t_mix) for r in report.results if r.t_mix and r.t_mix > 0]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}">',
             '<rect width="100%" height="100%" fill="white"/>']
    if not pts:
        parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT / 2}" text-anchor="middle" '
                     'font-size="14">no mixing times recorded</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    xlo, xhi = math.floor(lx.min()), math.ceil(lx.max())
    ylo, yhi = math.floor(ly.min()), math.ceil(ly.max())
    if xhi == xlo:
        xhi += 1
    if yhi == ylo:
        yhi += 1

    def sx(v):
        # kappa decreases to the right, as in the sweeps
        return MARGIN + (xhi - v) / (xhi - xlo) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (v - ylo) / (yhi - ylo) * (HEIGHT - 2 * MARGIN)

    x0, x1, y0, y1 = MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN
    parts.append(f'<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>')
    for d in _decades(xlo, xhi):
        parts.append(f'<line x1="{sx(d):.2f}" y1="{y0}" x2="{sx(d):.2f}" y2="{y0 + 5}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{sx(d):.2f}" y="{y0 + 20}" text-anchor="middle" '
                     f'font-size="11">1e{d}</text>')
    for d in _decades(ylo, yhi):
        parts.append(f'<line x1="{x0 - 5}" y1="{sy(d):.2f}" x2="{x0}" y2="{sy(d):.2f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{sy(d) + 4:.2f}" text-anchor="end" '
                     f'font-size="11">1e{d}</text>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" text-anchor="middle" '
                 'font-size="12">kappa</text>')
    parts.append(f'<text x="15" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 15 {HEIGHT / 2})">t_mix</text>')

    order = np.argsort(lx)[::-1]
    line = " ".join(f"{sx(lx[i]):.2f},{sy(ly[i]):.2f}" for i in order)
    parts.append(f'<polyline points="{line}" stroke="#1f77b4" fill="none" stroke-width="1.5"/>')
    for i in order:
        parts.append(f'<circle cx="{sx(lx[i]):.2f}" cy="{sy(ly[i]):.2f}" r="3" fill="#1f77b4"/>')

    p = report.theoretical_exponent
    if p is not None:
        # reference slope through the geometric centre of the data
        cx, cy = lx.mean(), ly.mean()
        ends = [(xlo, cy - p * (xlo - cx)), (xhi, cy - p * (xhi - cx))]
        seg = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in ends)
        parts.append(f'<polyline points="{seg}" stroke="#d62728" stroke-dasharray="6,4" '
                     'fill="none"/>')
        parts.append(f'<text x="{x1}" y="{y1 - 8}" text-anchor="end" font-size="11" '
                     f'fill="#d62728">reference slope {p:.4g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
