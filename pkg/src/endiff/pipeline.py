"""Kappa-sweep orchestration over the trajectory and mode-solver routes."""

from __future__ import annotations

import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import ConfigError, EndiffError, HorizonTooShortError
from .fdr import (
    DissipationCurve, Source, default_quadrature, dissipation_curve, sim_params_for,
)
from .flows import (
    Circular, CriticalShear, Domain, LipschitzShear, Monomial, SinPower, WeierstrassShear,
    datum_norms, make_initial_datum,
)
from .rates import (
    DecayCurve, SharpnessCheck, TabulatedBound, bound_constant, fit_exponent,
    mixing_time, sharpness_constraint, theoretical_exponent, verify_upper_bound,
)
from .report import KappaResult, RunReport, emit_outputs
from .spectral import (
    DEFAULT_CELLS, RadialModeProblem, build_problem, circular_mode_profile,
    energy_residual, shear_mode_profile, solve_circular_mode, solve_shear_mode,
)
from .trajectories import SimParams, build_ensemble

logger = logging.getLogger(__name__)

TABLE_POINTS = 65


class StageError(EndiffError):
    """A module error tagged with the pipeline stage and diffusivity."""

    def __init__(self, stage, kappa, cause, report=None):
        where = f"stage {stage!r}" + ("" if kappa is None else f" at kappa={kappa:g}")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.kappa = kappa
        self.cause = cause
        self.report = report


# --------------------------------------------------------------------------
# building blocks


def build_field(flow, kappa=None):
    """Velocity field described by a ``FlowSpec``."""
    domain = Domain.strip(flow.L_y) if flow.domain == "strip" else Domain.torus()
    if flow.profile == "sin":
        profile = SinPower(flow.power, flow.amplitude)
    else:
        profile = Monomial(flow.power, flow.amplitude)
    if flow.family == "critical_shear":
        return CriticalShear(profile, domain)
    if flow.family == "lipschitz_shear":
        return LipschitzShear(profile, domain=domain)
    if flow.family == "weierstrass":
        if flow.L:
            return WeierstrassShear(flow.alpha, flow.L)
        if kappa is None:
            raise ConfigError("the default Weierstrass level depends on kappa")
        return WeierstrassShear.for_kappa(flow.alpha, kappa)
    return Circular(flow.q)


def solve_mode(field_, datum, t_end, dt=None, delta=0, refine=1,
               cells_per_scale=DEFAULT_CELLS, **kwargs):
    """Build the mode problem for ``datum`` and solve it to ``t_end``."""
    problem = build_problem(field_, datum, t_end, delta=delta, refine=refine,
                            cells_per_scale=cells_per_scale)
    if isinstance(problem, RadialModeProblem):
        return solve_circular_mode(problem, circular_mode_profile(problem, datum),
                                   t_end, dt, **kwargs)
    return solve_shear_mode(problem, shear_mode_profile(problem, datum), t_end, dt, **kwargs)


def mixing_run(field_, datum, lam=0.5, t_guess=None, dt=None, delta=0, refine=1,
               cells_per_scale=DEFAULT_CELLS, max_doublings=12, record_times=(),
               record_every=1, stop=True):
    """Solve until the norm falls to ``lam`` of its start, doubling the horizon.

    Returns ``(solution, t_mix, t_end)``.  With ``stop`` the solve ends at the
    first step below the threshold; otherwise it runs to the full horizon.
    """
    if t_guess is None:
        t_guess = datum.kappa ** -theoretical_exponent(field_).exponent
    t_end = float(max(t_guess, max(record_times, default=0.0)))
    for attempt in range(max_doublings + 1):
        sol = solve_mode(field_, datum, t_end, dt, delta, refine, cells_per_scale,
                         record_times=record_times, record_every=record_every,
                         stop_below=lam if stop else None)
        curve = DecayCurve(datum.kappa, sol.times, sol.norm_sq)
        try:
            return sol, mixing_time(curve, lam), t_end
        except HorizonTooShortError as exc:
            if attempt == max_doublings:
                raise
            logger.info("kappa=%g: horizon %g too short, doubling", datum.kappa, t_end)
            t_end *= 2.0
    raise AssertionError("unreachable")


def trajectory_summary(ensemble):
    """Sample means and second moments of the endpoints with standard errors."""
    out = {"t": ensemble.params.t, "M": ensemble.size, "start": list(ensemble.start)}
    names = ("R", "Theta") if ensemble.samples.polar else ("X", "Y")
    for name, values in zip(names, (ensemble.samples.first, ensemble.samples.second)):
        v = np.asarray(values, dtype=float)
        for label, data in ((f"mean_{name}", v), (f"mean_{name}2", v * v)):
            out[label] = float(data.mean())
            out[label + "_se"] = float(data.std(ddof=1) / math.sqrt(v.size))
    return out


def _pde_dissipation(result):
    return DissipationCurve(result.kappa, result.pde_times, result.dissipation,
                            np.zeros(result.pde_times.size), Source.PDE)


def _relative_gap(result):
    t = result.fdr.times
    idx = np.searchsorted(result.pde_times, t)
    idx = np.clip(idx, 0, result.pde_times.size - 1)
    if not np.allclose(result.pde_times[idx], t, rtol=1e-12, atol=0):
        return None
    ref = result.dissipation[idx]
    return float(np.max(np.abs(result.fdr.values - ref) / ref))


# --------------------------------------------------------------------------
# one diffusivity


def run_kappa(config, kappa):
    """All per-kappa stages; returns ``(KappaResult, failure-or-None)``."""
    stages = set(config.stages)
    result = KappaResult(kappa)
    stage = "setup"
    try:
        field_ = build_field(config.flow, kappa)
        datum = make_initial_datum(field_, kappa)
        mc = config.mc
        h = mc.h or None
        if "simulate-trajectories" in stages:
            stage = "simulate-trajectories"
            start = (datum.center, 0.0) if isinstance(field_, Circular) else (0.0, datum.center)
            params = SimParams(kappa, mc.delta, mc.times[-1], h, mc.M, config.seed)
            result.trajectories = trajectory_summary(build_ensemble(start, field_, params))
        measured = "check-sharpness" in stages and config.sharpness.shape == "measured"
        if stages & {"solve-pde", "fit-rate"} or measured or (
                "verify-bounds" in stages and "estimate-fdr" not in stages):
            stage = "solve-pde"
            pde = config.pde
            want_fdr = "estimate-fdr" in stages
            record = list(mc.times) if want_fdr else []
            if "fit-rate" in stages:
                sol, result.t_mix, result.t_end = mixing_run(
                    field_, datum, pde.lam, pde.t_end or None, pde.dt or None, mc.delta,
                    pde.refine, pde.cells_per_scale, pde.max_doublings, record,
                    pde.record_every, stop=not (want_fdr or measured))
            else:
                t_end = pde.t_end or max(record + [kappa ** -theoretical_exponent(field_).exponent])
                sol = solve_mode(field_, datum, t_end, pde.dt or None, mc.delta, pde.refine,
                                 pde.cells_per_scale, record_times=record,
                                 record_every=pde.record_every)
                result.t_end = t_end
            result.pde_times = sol.times
            result.norm_sq = sol.norm_sq
            result.dissipation = sol.dissipation
            result.energy_residual = energy_residual(sol)
        if "estimate-fdr" in stages:
            stage = "estimate-fdr"
            params = sim_params_for(kappa, mc.times, mc.M, mc.delta, h, config.seed)
            quad = default_quadrature(datum, mc.times[0], mc.times[-1], kappa,
                                      mc.fine_per_scale)
            result.fdr = dissipation_curve(datum, field_, params, mc.times, quad, mc.estimator)
            if result.pde_times is not None:
                result.max_rel_gap = _relative_gap(result)
        if "verify-bounds" in stages:
            stage = "verify-bounds"
            curve = result.fdr if result.fdr is not None else _pde_dissipation(result)
            p, n = _bound_exponent(config, field_)
            result.c_fit = bound_constant(curve.times, curve.values,
                                          datum_norms(datum).lp_norm_sq, kappa,
                                          config.bounds.form, p, n, config.bounds.window)
    except (EndiffError, ValueError, FloatingPointError) as exc:
        logger.error("kappa=%g failed in %s: %s", kappa, stage, exc)
        return result, (stage, kappa, exc)
    return result, None


def _bound_exponent(config, field_):
    p = config.bounds.p or theoretical_exponent(field_).exponent
    n = field_.n if isinstance(field_, CriticalShear) else None
    return p, n


# --------------------------------------------------------------------------
# sweeps


def _versions():
    import numba
    import scipy

    return {"endiff": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _map(config, jobs):
    if jobs <= 1 or len(config.kappas) == 1:
        return [run_kappa(config, k) for k in config.kappas]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_kappa, [config] * len(config.kappas), config.kappas))


def _sharpness(config, report):
    spec = config.sharpness
    xi_p, r_p = spec.xi_exponent, spec.r_exponent
    if spec.shape == "measured":
        curves = [_pde_dissipation(r) if r.pde_times is not None else r.fdr
                  for r in report.results]
        if any(c is None for c in curves):
            raise ConfigError("a measured sharpness shape needs dissipation curves")
        norms = []
        for r in report.results:
            field_ = build_field(config.flow, r.kappa)
            norms.append(datum_norms(make_initial_datum(field_, r.kappa)).lp_norm_sq)
        reach = min(c.kappa ** xi_p * c.times[-1] for c in curves)
        x_max = spec.x_max or reach
        shape = TabulatedBound.from_curves(curves, norms, xi_p,
                                           np.linspace(0.0, x_max, TABLE_POINTS))
    else:
        shape = spec.shape
    check = SharpnessCheck(shape, lambda k: k ** xi_p, lambda k: k ** r_p, spec.C,
                           tuple(spec.kappas))
    return sharpness_constraint(check)


def run_experiment(config, out=None, force=False, jobs=1):
    """Run every requested stage over the sweep; optionally write artifacts to ``out``.

    Per-kappa failures do not stop the other diffusivities.  When anything
    fails, the results obtained so far are written (flagged ``partial``) and a
    :class:`StageError` naming the first failing stage and kappa is raised.
    """
    config.validate()
    started = time.perf_counter()
    report = RunReport(config, versions=_versions())
    field0 = build_field(config.flow, config.kappas[0])
    report.theoretical_exponent = theoretical_exponent(field0).exponent

    failures = []
    for result, failure in _map(config, jobs):
        report.results.append(result)
        if failure is not None:
            failures.append(failure)

    stages = config.stages
    if not failures:
        stage = None
        try:
            if "fit-rate" in stages:
                stage = "fit-rate"
                pts = [(r.kappa, r.t_mix) for r in report.results]
                report.rate_fit = fit_exponent(pts, theoretical_exponent(field0))
            if "verify-bounds" in stages:
                stage = "verify-bounds"
                curves = [r.fdr if r.fdr is not None else _pde_dissipation(r)
                          for r in report.results]
                norms = [datum_norms(make_initial_datum(build_field(config.flow, r.kappa),
                                                        r.kappa)).lp_norm_sq
                         for r in report.results]
                p, n = _bound_exponent(config, field0)
                report.bound_check = verify_upper_bound(curves, norms, config.bounds.form, p,
                                                        n, config.bounds.window)
            if "check-sharpness" in stages:
                stage = "check-sharpness"
                report.sharpness = _sharpness(config, report)
        except (EndiffError, ValueError) as exc:
            failures.append((stage, None, exc))

    report.wall_clock = time.perf_counter() - started
    if failures:
        report.partial = True
        report.failures = [{"stage": s, "kappa": k, "error": f"{type(e).__name__}: {e}"}
                           for s, k, e in failures]
    if out is not None:
        emit_outputs(report, out, force=force)
    if failures:
        stage, kappa, exc = failures[0]
        raise StageError(stage, kappa, exc, report) from exc
    return report

