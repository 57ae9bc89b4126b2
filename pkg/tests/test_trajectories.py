import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from endiff import rng
from endiff.errors import ParameterError
from endiff.flows import Circular, CriticalShear, LipschitzShear, Monomial, SinPower
from endiff.trajectories import (
    SimParams, build_ensemble, circular_endpoint, reversed_brownian_paths,
    sample_reversed_brownian, shear_endpoint, time_grid,
)


def within(est, samples, target, k=3.0):
    se = np.std(samples, ddof=1) / math.sqrt(samples.size)
    return abs(est - target) <= k * se, se


def zero_shear():
    return LipschitzShear(Monomial(0, 0.0), lipschitz_const=0.0)


def reversed_cov_oracle(t, tau, sigma):
    # W_s = V_{t-s}: Cov(V_a, V_b) = min(a, b)
    return min(t - tau, t - sigma)


# --- time-reversed Brownian motion -----------------------------------------

@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.1, 5.0), n=st.integers(1, 60), stream=st.integers(0, 10 ** 6))
def test_reversed_path_is_pinned_at_horizon(t, n, stream):
    path = sample_reversed_brownian(t, t / n, stream)
    assert path.values[-1] == 0.0
    assert path.times[0] == 0.0
    assert path.times[-1] == pytest.approx(t)
    assert np.all(np.diff(path.times) > 0)


def test_time_grid_allows_one_short_step():
    g = time_grid(1.0, 0.3)
    assert np.allclose(g, [0, 0.3, 0.6, 0.9, 1.0])
    g = time_grid(1.0, 0.25, extra=[0.1])
    assert 0.1 in g and g[-1] == 1.0


def test_reversed_brownian_second_moment():
    _, v = reversed_brownian_paths(1.0, 0.05, rng.stream_ids(0, 100_000))
    w0sq = v[:, 0] ** 2
    ok, _ = within(w0sq.mean(), w0sq, 1.0)
    assert ok


def test_reversed_brownian_covariance():
    times, v = reversed_brownian_paths(1.0, 0.05, rng.stream_ids(0, 100_000), master_seed=3)
    i = np.argmin(abs(times - 0.25))
    j = np.argmin(abs(times - 0.5))
    prod = v[:, i] * v[:, j]
    target = reversed_cov_oracle(1.0, 0.25, 0.5)
    assert target == pytest.approx(0.5)
    ok, _ = within(prod.mean(), prod, target)
    assert ok


@pytest.mark.parametrize("n", [1, 2, 3])
def test_reversed_brownian_even_moments(n):
    t, tau = 3.0, 1.0
    times, v = reversed_brownian_paths(t, 0.25, rng.stream_ids(0, 200_000), master_seed=11)
    w = v[:, np.argmin(abs(times - tau))] ** (2 * n)
    target = math.factorial(2 * n) / (math.factorial(n) * 2 ** n) * (t - tau) ** n
    ok, _ = within(w.mean(), w, target)
    assert ok


def test_disjoint_increments_uncorrelated():
    times, v = reversed_brownian_paths(1.0, 0.1, rng.stream_ids(0, 50_000))
    a = v[:, 0] - v[:, 3]
    b = v[:, 5] - v[:, 9]
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 4 / math.sqrt(a.size)
    assert np.var(a, ddof=1) == pytest.approx(times[3] - times[0], rel=0.03)


# --- shear endpoints --------------------------------------------------------

def test_zero_shear_endpoint():
    k, t = 0.01, 2.0
    e = shear_endpoint(0.7, 0.2, zero_shear(), SimParams(kappa=k, t=t, h=0.1, M=100_000))
    assert np.all(e.X == 0.7)
    d = (e.Y - 0.2) ** 2
    ok, _ = within(d.mean(), d, 2 * k * t)
    assert ok


def test_constant_shear_endpoint_is_deterministic_in_x():
    f = LipschitzShear(Monomial(0, 1.5), lipschitz_const=0.0)
    e = shear_endpoint(0.3, 1.0, f, SimParams(kappa=0.01, t=2.0, h=0.1, M=100))
    assert np.allclose(e.X, 0.3 - 1.5 * 2.0, rtol=0, atol=1e-13)


def integrated_bm_second_moment(t):
    # closed form of the double integral of t - max(tau, sigma) over [0, t]^2
    return t ** 3 / 3.0


def test_linear_shear_streamwise_second_moment():
    k, t = 0.01, 1.0
    f = CriticalShear(Monomial(1))
    e = shear_endpoint(0.0, 0.0, f, SimParams(kappa=k, t=t, h=0.005, M=100_000))
    target = 2 * k * integrated_bm_second_moment(t)
    assert target == pytest.approx(0.006667, abs=1e-6)
    ok, se = within(np.mean(e.X ** 2), e.X ** 2, target)
    assert ok, (np.mean(e.X ** 2), target, se)


def test_x_diffusion_adds_independent_variance():
    k, t = 0.05, 1.0
    e = shear_endpoint(0.0, 0.0, zero_shear(),
                       SimParams(kappa=k, t=t, delta=1, h=0.1, M=100_000))
    d = e.X ** 2
    ok, _ = within(d.mean(), d, 2 * k * t)
    assert ok
    assert abs(np.corrcoef(e.X, e.Y)[0, 1]) < 4 / math.sqrt(e.X.size)


def test_shear_snapshots_match_single_horizon_runs():
    f = CriticalShear(SinPower(1))
    p = SimParams(kappa=0.01, t=1.0, h=0.01, M=50)
    snap = shear_endpoint(0.0, 0.4, f, p, times=[0.5, 1.0])
    single = shear_endpoint(0.0, 0.4, f, p)
    assert snap.X.shape == (2, 50)
    assert np.allclose(snap.X[1], single.X, rtol=0, atol=1e-13)
    assert np.array_equal(snap.Y[1], single.Y)


def test_shear_y_marginal_is_gaussian():
    k, t = 0.02, 1.5
    e = shear_endpoint(0.0, 0.5, CriticalShear(SinPower(1)),
                       SimParams(kappa=k, t=t, h=0.05, M=100_000))
    z = (e.Y - 0.5) / math.sqrt(2 * k * t)
    d = stats.kstest(z, "norm").statistic
    assert d < 1.628 / math.sqrt(z.size)


def test_step_refinement_within_standard_error():
    f = CriticalShear(SinPower(1))
    M = 10_000
    coarse = shear_endpoint(0.0, 0.3, f, SimParams(kappa=0.01, t=1.0, h=0.02, M=M))
    fine = shear_endpoint(0.0, 0.3, f, SimParams(kappa=0.01, t=1.0, h=0.01, M=M))
    se = np.std(fine.X, ddof=1) / math.sqrt(M)
    assert abs(coarse.X.mean() - fine.X.mean()) < se


def test_shear_rejects_circular_field():
    with pytest.raises(ParameterError):
        shear_endpoint(0.0, 1.0, Circular(2), SimParams(kappa=0.1))


# --- circular endpoints -----------------------------------------------------

def test_circular_radial_second_moment():
    r, k, t = 1.0, 0.01, 10.0
    e = circular_endpoint(r, 0.0, 2, SimParams(kappa=k, t=t, M=100_000))
    assert np.all(e.R > 0)
    ok, se = within(np.mean(e.R ** 2), e.R ** 2, r * r + 4 * k * t)
    assert ok, (np.mean(e.R ** 2), se)


def test_circular_inverse_moment_bound():
    r, k, t = 1.0, 0.01, 10.0
    e = circular_endpoint(r, 0.0, 2, SimParams(kappa=k, t=t, M=100_000))
    inv = e.R ** -2.0
    se = np.std(inv, ddof=1) / math.sqrt(inv.size)
    assert inv.mean() <= 1 / (r * r - 4 * k * t) + 3 * se


def test_circular_zero_diffusivity_is_rotation():
    e = circular_endpoint(0.8, 0.3, 2, SimParams(kappa=0.0, t=1.0, M=3))
    assert np.all(e.R == 0.8)
    assert np.allclose(e.Theta, 0.3 - 0.8 ** 2 * 1.0, rtol=0, atol=1e-14)


def test_circular_near_origin_stays_positive_and_unbiased():
    r, k, t = 0.05, 0.1, 1.0
    e = circular_endpoint(r, 0.0, 2, SimParams(kappa=k, t=t, h=0.05, M=100_000))
    assert np.all(e.R > 0) and np.all(np.isfinite(e.Theta))
    ok, _ = within(np.mean(e.R ** 2), e.R ** 2, r * r + 4 * k * t)
    assert ok


def test_circular_requires_positive_radius():
    with pytest.raises(ParameterError):
        circular_endpoint(0.0, 0.0, 2, SimParams(kappa=0.1))


# --- ensembles --------------------------------------------------------------

@pytest.mark.parametrize("field_, start", [
    (CriticalShear(SinPower(1)), (0.0, 1.0)),
    (Circular(2), (0.5, 0.0)),
])
def test_ensembles_are_bitwise_reproducible(field_, start):
    p = SimParams(kappa=0.01, t=1.0, M=2, master_seed=123)
    a = build_ensemble(start, field_, p)
    b = build_ensemble(start, field_, p)
    assert a.size == 2
    assert np.array_equal(a.samples.first, b.samples.first)
    assert np.array_equal(a.samples.second, b.samples.second)


def test_samples_do_not_depend_on_batch_composition():
    f = CriticalShear(SinPower(1))
    p = SimParams(kappa=0.01, t=1.0, h=0.05, M=40)
    full = shear_endpoint(0.0, 0.5, f, p, streams=rng.stream_ids(0, 40))
    part = shear_endpoint(0.0, 0.5, f, p, streams=rng.stream_ids(25, 15))
    assert np.array_equal(full.X[25:], part.X)


def test_zero_shear_increments_have_gaussian_kurtosis():
    p = SimParams(kappa=0.01, t=1.0, h=0.1, M=100_000, master_seed=5)
    ens = build_ensemble((0.0, 0.0), zero_shear(), p)
    d = ens.samples.Y
    m2 = np.mean(d ** 2)
    ratio = np.mean(d ** 4) / m2 ** 2
    # delta method standard error of the kurtosis of a Gaussian sample
    se = math.sqrt(24 / d.size)
    assert abs(ratio - 3) < 5 * se


def test_distinct_seeds_give_distinct_means():
    f = CriticalShear(SinPower(1))
    a = build_ensemble((0.0, 0.3), f, SimParams(kappa=0.01, t=1.0, h=0.1, M=100, master_seed=1))
    b = build_ensemble((0.0, 0.3), f, SimParams(kappa=0.01, t=1.0, h=0.1, M=100, master_seed=2))
    assert a.samples.Y.mean() != b.samples.Y.mean()


@pytest.mark.parametrize("kwargs", [
    dict(kappa=-1.0), dict(kappa=0.1, delta=2), dict(kappa=0.1, M=1),
    dict(kappa=0.1, t=1.0, h=2.0), dict(kappa=0.1, h=0.0),
])
def test_invalid_params(kwargs):
    with pytest.raises(ParameterError):
        SimParams(**kwargs)
