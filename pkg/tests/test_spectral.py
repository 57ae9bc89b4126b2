import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from endiff.errors import NumericalInstabilityError, ParameterError, ResolutionError
from endiff.flows import Circular, CriticalShear, LipschitzShear, Monomial, SinPower, make_initial_datum
from endiff.rates import DecayCurve, mixing_time
from endiff.spectral import (
    RadialModeProblem, ShearModeProblem, circular_mode_profile, decay_curve,
    energy_residual, shear_mode_profile, solve_circular_mode, solve_datum,
    solve_shear_mode,
)


def zero_shear():
    return LipschitzShear(Monomial(0, 0.0), lipschitz_const=0.0)


def sin_problem(kappa, N=256, delta=0):
    return ShearModeProblem.from_field(CriticalShear(SinPower(1)), kappa, delta=delta, N=N)


def test_heat_mode_decays_exactly():
    p = ShearModeProblem.from_field(zero_shear(), 0.1, k=1, delta=1, N=256)
    sol = solve_shear_mode(p, np.ones(256, complex), 1.0, dt=0.01)
    assert sol.norm_sq[-1] / sol.norm_sq[0] == pytest.approx(math.exp(-0.2), rel=1e-12)
    assert sol.norm_sq[-1] / sol.norm_sq[0] == pytest.approx(0.81873, abs=1e-5)


@pytest.mark.parametrize("m_y", [1, 3])
def test_heat_modes_in_y(m_y):
    kappa, t = 0.05, 2.0
    p = ShearModeProblem.from_field(zero_shear(), kappa, k=1, delta=0, N=256)
    sol = solve_shear_mode(p, np.exp(1j * m_y * p.y), t, dt=0.05)
    assert sol.norm_sq[-1] / sol.norm_sq[0] == pytest.approx(math.exp(-2 * kappa * m_y ** 2 * t), rel=1e-12)


def test_shear_transport_without_diffusion_is_unitary():
    p = sin_problem(0.0)
    a0 = np.exp(1j * p.y) * (1 + 0.3 * np.cos(2 * p.y))
    sol = solve_shear_mode(p, a0, 20.0, dt=0.05)
    assert np.max(np.abs(sol.norm_sq / sol.norm_sq[0] - 1)) < 1e-12
    assert energy_residual(sol) <= 1e-12


def test_radial_transport_without_diffusion_is_unitary():
    pr = RadialModeProblem.build(2, 0.0, 10.0, scale=0.2, cells_per_scale=32)
    a0 = -1j * np.exp(-(pr.centers - 0.6) ** 2 / 0.01)
    sol = solve_circular_mode(pr, a0, 10.0, dt=0.05)
    assert np.max(np.abs(sol.norm_sq / sol.norm_sq[0] - 1)) < 1e-12
    assert energy_residual(sol) <= 1e-12


def test_sin_shear_mixing_time_grows_as_kappa_drops():
    field_ = CriticalShear(SinPower(1))
    times = []
    for kappa in (1e-2, 1e-3, 1e-4):
        d = make_initial_datum(field_, kappa)
        sol = solve_datum(field_, d, 50 * kappa ** -0.5, stop_below=0.5)
        assert energy_residual(sol) < 1e-10
        assert sol.norm_sq[-1] <= 0.5 * sol.norm_sq[0]
        times.append(mixing_time(DecayCurve(kappa, sol.times, sol.norm_sq)))
    assert times[0] < times[1] < times[2]


def test_radial_heat_control_self_converges():
    d = make_initial_datum(Circular(2), 1e-3)
    finals = []
    for cells in (256, 512):
        pr = RadialModeProblem.build(2, 1e-3, 10.0, m=0, cells_per_scale=cells)
        a0 = (1j * circular_mode_profile(pr, d)).real
        sol = solve_circular_mode(pr, a0, 10.0)
        assert np.all(np.diff(sol.norm_sq) <= 0)
        assert sol.norm_sq[-1] < sol.norm_sq[0]
        finals.append(sol.norm_sq[-1])
    assert abs(finals[1] / finals[0] - 1) < 1e-6


def test_circular_datum_energy_residual():
    field_ = Circular(2)
    d = make_initial_datum(field_, 1e-3)
    sol = solve_datum(field_, d, 40.0)
    assert energy_residual(sol) < 1e-8


def test_shear_acceptance_configuration_residual_and_convergence():
    field_ = CriticalShear(SinPower(1))
    d = make_initial_datum(field_, 1e-3)
    coarse = solve_datum(field_, d, 40.0, record_times=[5, 10, 20, 40])
    fine = solve_datum(field_, d, 40.0, record_times=[5, 10, 20, 40], refine=2)
    assert energy_residual(coarse) <= 1e-6
    assert abs(fine.norm_sq[-1] / coarse.norm_sq[-1] - 1) <= 1e-6
    for t in (5, 10, 20, 40):
        assert t in coarse.times


def smooth_shear_residual(dt):
    p = sin_problem(1e-2)
    a0 = -1j * np.exp(-(p.y - 1.0) ** 2 / (2 * 0.3 ** 2))
    return energy_residual(solve_shear_mode(p, a0, 10.0, dt=dt, dissipation="trapezoid"))


def smooth_radial_residual(dt):
    pr = RadialModeProblem.build(2, 1e-2, 10.0, scale=0.3, cells_per_scale=64)
    a0 = -1j * np.exp(-(pr.centers - 0.9) ** 2 / (2 * 0.1 ** 2))
    return energy_residual(solve_circular_mode(pr, a0, 10.0, dt=dt, dissipation="trapezoid"))


@pytest.mark.parametrize("residual", [smooth_shear_residual, smooth_radial_residual])
def test_residual_is_second_order_in_dt(residual):
    ratio = residual(0.1) / residual(0.05)
    assert 3.5 < ratio < 4.5


@settings(max_examples=15, deadline=None)
@given(kappa=st.floats(1e-4, 1e-1), k=st.integers(1, 3), delta=st.integers(0, 1),
       center=st.floats(0, 2 * math.pi))
def test_shear_norm_is_nonincreasing(kappa, k, delta, center):
    p = ShearModeProblem.from_field(CriticalShear(SinPower(1)), kappa, k=k, delta=delta, N=256)
    a0 = np.exp(-((p.y - center + math.pi) % (2 * math.pi) - math.pi) ** 2 / 0.1) + 0j
    sol = solve_shear_mode(p, a0, 5.0, dt=0.05)
    assert np.all(sol.norm_sq[1:] <= sol.norm_sq[:-1] * (1 + 1e-12))
    assert energy_residual(sol) < 1e-10


@settings(max_examples=10, deadline=None)
@given(kappa=st.floats(1e-4, 1e-2), q=st.sampled_from([1.0, 2.0, 3.0]), m=st.integers(0, 2))
def test_radial_norm_is_nonincreasing(kappa, q, m):
    pr = RadialModeProblem.build(q, kappa, 5.0, m=m, scale=0.2, cells_per_scale=32)
    a0 = np.exp(-(pr.centers - 0.6) ** 2 / 0.01) + 0j
    sol = solve_circular_mode(pr, a0, 5.0, dt=0.05)
    assert np.all(sol.norm_sq[1:] <= sol.norm_sq[:-1] * (1 + 1e-12))


def test_superposition_of_mode_solutions():
    p = sin_problem(1e-2)
    a = np.exp(-(p.y - 1.0) ** 2 / 0.05) + 0j
    b = 1j * np.exp(-(p.y - 4.0) ** 2 / 0.2)
    sa = solve_shear_mode(p, a, 3.0, dt=0.05)
    sb = solve_shear_mode(p, b, 3.0, dt=0.05)
    sab = solve_shear_mode(p, 2 * a - 3 * b, 3.0, dt=0.05)
    scale = np.max(np.abs(sab.final))
    assert np.max(np.abs(sab.final - (2 * sa.final - 3 * sb.final))) < 1e-12 * scale


def test_projected_shear_datum_reproduces_closed_form_norm():
    field_ = CriticalShear(SinPower(1))
    d = make_initial_datum(field_, 1e-3)
    p = ShearModeProblem.from_field(field_, 1e-3, scale=d.half_width)
    a0 = shear_mode_profile(p, d)
    norm = math.pi * p.length / p.N * np.sum(np.abs(a0) ** 2)
    assert norm == pytest.approx(math.pi * 2 * d.half_width / 3, rel=1e-6)
    # peak value 1 at the centre, up to the truncated tail
    assert np.max(np.abs(a0)) == pytest.approx(1.0, abs=1e-2)


def test_radial_datum_norm_converges_to_closed_form():
    d = make_initial_datum(Circular(2), 1e-4)
    pr = RadialModeProblem.build(2, 1e-4, 1.0)
    a0 = circular_mode_profile(pr, d)
    norm = math.pi * np.sum(pr.volumes * np.abs(a0) ** 2)
    assert norm == pytest.approx(2 * math.pi * d.half_width ** 2, rel=1e-5)


def test_coarse_radial_mesh_is_rejected():
    d = make_initial_datum(Circular(2), 1e-3)
    pr = RadialModeProblem.build(2, 1e-3, 1.0, cells_per_scale=8)
    with pytest.raises(ResolutionError):
        solve_circular_mode(pr, circular_mode_profile(pr, d), 1.0)


def test_non_finite_state_is_reported():
    p = sin_problem(1e-2)
    a0 = np.ones(p.N, complex)
    a0[3] = np.nan
    with pytest.raises(NumericalInstabilityError):
        solve_shear_mode(p, a0, 1.0, dt=0.1)


def test_decay_curve_is_nonincreasing():
    field_ = CriticalShear(SinPower(1))
    d = make_initial_datum(field_, 1e-3)
    p = ShearModeProblem.from_field(field_, 1e-3, scale=d.half_width)
    curve = decay_curve(p, d, 20.0)
    assert curve.kappa == 1e-3
    assert np.all(np.diff(curve.norm_sq) <= 0)


@pytest.mark.parametrize("kwargs", [dict(N=100), dict(N=128), dict(k=0), dict(delta=3)])
def test_invalid_shear_problems(kwargs):
    args = dict(k=1, delta=0, kappa=0.1, N=256)
    args.update(kwargs)
    with pytest.raises(ParameterError):
        ShearModeProblem(args["k"], args["delta"], args["kappa"], np.zeros(args["N"]), args["N"])
