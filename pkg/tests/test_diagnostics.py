import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from vlasov_cutoff.coulomb_field import Softening
from vlasov_cutoff.diagnostics import (density_grid, dyadic_radii, dyadic_shell_census,
                                       far_integral, field_work, fit_exponent, fit_linear,
                                       gaussian_tail_stat, interpolation_check,
                                       interpolation_constant, lattice_masses, local_energy,
                                       local_energy_many, mollifier, mollifier_deriv,
                                       nested_average_check, q_sup, shell_count, shell_integral,
                                       time_average_field)
from vlasov_cutoff.phase_space import PhysParams, PowerLaw, SamplingSpec, sample_ensemble

EMPTY = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))


@pytest.fixture(scope="module")
def small_ensemble():
    return sample_ensemble(PowerLaw(1.0, 0.5), PhysParams(1.0, 1.0, 0.5), SamplingSpec(3, 1, 1), 2)


def one(pos, vel, w=1.0):
    return np.array([pos], float), np.array([vel], float), np.array([w])


# ------------------------------------------------------------- mollifier
def test_mollifier_examples():
    assert mollifier(0.5) == 1.0
    assert mollifier(3.0) == 0.0
    assert mollifier(1.5) == pytest.approx(0.5, abs=1e-15)
    assert abs(mollifier_deriv(1.5)) == pytest.approx(15 / 8, rel=1e-15)


def test_mollifier_derivative_matches_differences():
    r = np.linspace(0.9, 2.1, 2001)
    h = 1e-6
    fd = (mollifier(r + h) - mollifier(r - h)) / (2 * h)
    np.testing.assert_allclose(mollifier_deriv(r), fd, atol=1e-6)


@settings(max_examples=200)
@given(a=st.floats(0, 10), b=st.floats(0, 10))
def test_mollifier_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= mollifier(hi) <= mollifier(lo) <= 1.0
    assert -15 / 8 - 1e-15 <= mollifier_deriv(lo) <= 0.0


# ------------------------------------------------------------- local energy
def test_local_energy_empty():
    rep = local_energy(EMPTY, [0, 0, 0], 1.0)
    assert rep.total == 0.0


def test_local_energy_single_particle_kinetic():
    rep = local_energy(one([0.3, 0, 0], [0, 2.0, 0]), [0.3, 0, 0], 1.0)
    assert rep.kinetic == 2.0 and rep.potential == 0.0


def test_local_energy_unit_pair_potential():
    state = (np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.zeros((2, 3)), np.ones(2))
    rep = local_energy(state, [0.5, 0, 0], 5.0, soft=Softening(0.0))
    assert rep.potential == pytest.approx(1.0, rel=1e-15)


def test_local_energy_many_matches_single(small_ensemble):
    soft = Softening(0.3)
    mus = np.array([[0.0, 0, 0], [1.5, -0.5, 2.0], [4.0, 4.0, 0.0]])
    many = local_energy_many(small_ensemble, mus, 2.0, soft)
    for mu, row in zip(mus, many):
        rep = local_energy(small_ensemble, mu, 2.0, soft)
        assert row == pytest.approx([rep.kinetic, rep.potential], rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), r1=st.floats(0.5, 4.0), r2=st.floats(0.5, 4.0))
def test_local_energy_positive_and_monotone_in_radius(seed, r1, r2):
    rng = np.random.default_rng(seed)
    state = (rng.normal(size=(30, 3)), rng.normal(size=(30, 3)), rng.uniform(0, 1, 30))
    mu = rng.normal(size=3)
    lo, hi = sorted((r1, r2))
    a = local_energy(state, mu, lo, Softening(0.1))
    b = local_energy(state, mu, hi, Softening(0.1))
    assert 0.0 <= a.kinetic <= b.kinetic * (1 + 1e-14)
    assert 0.0 <= a.potential <= b.potential * (1 + 1e-14)


def test_covering_bound(small_ensemble):
    # phi(|x - mu| / 2R) <= sum_k phi(|x - mu_k| / R) for centres mu_k on a
    # lattice of spacing 2R / sqrt(3) covering the ball of radius 4R, so the
    # local energy at 2R is bounded by the covering count times the largest
    # local energy at R
    soft, r = Softening(0.3), 1.0
    s = 2 * r / math.sqrt(3)
    k = int(math.ceil(5 * r / s))
    ax = np.arange(-k, k + 1) * s
    centres = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    centres = centres[np.linalg.norm(centres, axis=1) <= 4 * r + r]
    mu = np.array([0.5, 0.0, 0.0])
    big = local_energy(small_ensemble, mu, 2 * r, soft).total
    parts = local_energy_many(small_ensemble, centres + mu, r, soft).sum(axis=1)
    assert big <= parts.sum() * (1 + 1e-12)
    assert big <= len(centres) * parts.max()


def test_q_sup_single_particle():
    res = q_sup(one([0.2, 0.1, 0.0], [1.0, 1.0, 0.0]), 1.0)
    assert res.value == pytest.approx(1.0, rel=1e-15)
    assert res.potential == 0.0


def test_q_sup_rejects_coarse_grid():
    with pytest.raises(ValueError):
        q_sup(one([0, 0, 0], [1, 0, 0]), 1.0, mu_grid_spacing=0.6)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6), r=st.floats(0.5, 3.0))
def test_q_sup_refinement_monotone(seed, r):
    rng = np.random.default_rng(seed)
    state = (rng.normal(scale=2, size=(40, 3)), rng.normal(size=(40, 3)), rng.uniform(0, 1, 40))
    coarse = q_sup(state, r, soft=Softening(0.2))
    fine = q_sup(state, r, mu_grid_spacing=r / 4, soft=Softening(0.2))
    assert fine.value >= coarse.value * (1 - 1e-13)
    # every grid value is a lower bound for the true supremum at the chosen centre
    assert local_energy(state, fine.mu, r, Softening(0.2)).total == pytest.approx(fine.value,
                                                                                 rel=1e-10)


# ------------------------------------------------------------- shell sums
def test_shell_integral_examples():
    assert shell_integral(one([2.0, 0, 0], [0, 0, 0]), [0, 0, 0], 4.0) == 0.25
    assert shell_integral(one([0.5, 0, 0], [0, 0, 0]), [0, 0, 0], 4.0) == 0.0
    with pytest.raises(ValueError):
        shell_integral(one([2.0, 0, 0], [0, 0, 0]), [0, 0, 0], 0.5)


def test_far_integral_examples():
    assert far_integral(one([6.0, 0, 0], [0, 0, 0]), [0, 0, 0], 2.0) == pytest.approx(1 / 36)
    assert far_integral(one([5.0, 0, 0], [0, 0, 0]), [0, 0, 0], 2.0) == 0.0


def test_far_integral_bounded_over_radii(small_ensemble):
    vals = [far_integral(small_ensemble, [0, 0, 0], r) for r in (1, 2, 4, 8)]
    assert all(np.isfinite(vals))
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[0] <= small_ensemble.total_weight / 9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), r=st.floats(1.0, 10.0))
def test_shell_integral_bounded_by_weight(seed, r):
    rng = np.random.default_rng(seed)
    state = (rng.normal(scale=4, size=(50, 3)), rng.uniform(0, 1, 50))
    val = shell_integral(state, [0, 0, 0], r)
    assert 0.0 <= val <= state[1].sum()


# ------------------------------------------------------------- densities
def test_interpolation_constant_against_minimisation():
    # rho(a) = (4 pi / 3) f a^3 + k / a^2 minimised numerically over a
    for f, k in [(1.0, 1.0), (0.3, 7.0), (5.0, 0.02)]:
        best = minimize_scalar(lambda a: 4 * math.pi / 3 * f * a ** 3 + k / a ** 2,
                               bounds=(1e-6, 1e3), method="bounded",
                               options={"xatol": 1e-12})
        rho = best.fun
        assert rho ** (5 / 3) == pytest.approx(interpolation_constant(f) * 0.5 * k, rel=1e-8)


def test_density_grid_uniform_cube():
    ax = (np.arange(10) + 0.5) / 10
    pos = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    grid = density_grid((pos, np.zeros_like(pos), np.full(1000, 1e-3)), 0.5)
    assert grid.moment_53 == pytest.approx(1.0, rel=1e-12)
    assert grid.total_weight == pytest.approx(1.0, rel=1e-12)


def test_density_grid_single_particle():
    grid = density_grid(one([0.3, 0.3, 0.3], [0, 0, 0], 2.5), 1.0)
    assert grid.sup_density == 2.5


def test_interpolation_check_sampled(small_ensemble):
    grid = density_grid(small_ensemble, 1.0)
    bad, ratio = interpolation_check(grid, small_ensemble.f_inf)
    assert len(bad) == 0 and 0.0 < ratio <= 1.0


def test_interpolation_check_flags_cold_cell():
    grid = density_grid(one([0, 0, 0], [0, 0, 0]), 1.0)
    bad, ratio = interpolation_check(grid, 1.0)
    assert len(bad) == 1 and ratio == math.inf


def test_lattice_masses_closed_ball():
    pos = np.array([[1.0, 0, 0], [2.0, 0, 0], [0.5, 0.5, 0.5]])
    m = lattice_masses((pos, np.array([1.0, 2.0, 4.0])), [[0, 0, 0], [3, 0, 0]])
    np.testing.assert_array_equal(m, [5.0, 2.0])


# ------------------------------------------------------------- time series
def test_field_work_examples():
    t = np.linspace(0, 2, 9)
    assert field_work(times=t, emag=np.zeros(9)).sup == 0.0
    fw = field_work(times=t, emag=np.full(9, 0.7))
    np.testing.assert_allclose(fw.sup_series, 0.7 * t, rtol=1e-15)


def test_time_average_constant():
    t = np.linspace(0, 1, 11)
    assert time_average_field(t, 0.15, 0.5, np.full(11, 3.0)) == pytest.approx(3.0, rel=1e-15)
    with pytest.raises(ValueError):
        time_average_field(t, 0.8, 0.5, np.full(11, 3.0))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10 ** 6), g=st.integers(1, 6), start=st.floats(0.0, 0.3))
def test_nested_average_identity(seed, g, start):
    rng = np.random.default_rng(seed)
    t = np.sort(np.r_[0.0, rng.uniform(0, 1, 40), 1.0])
    vals = rng.uniform(0, 5, t.size)
    ok, big, subs = nested_average_check(t, vals, start, 0.7 / g, g)
    assert ok and big <= subs.max() + 1e-12


# ------------------------------------------------------------- dyadic census
def test_shell_count_example():
    assert shell_count(1024, 0.3) == 7


def test_dyadic_radii_example():
    alpha, l = dyadic_radii(2.0, 1.0, 1.0, 0)
    assert alpha[1] == 1.0
    assert l[1] == pytest.approx(2.0 ** (2 / 3), rel=1e-15)


def test_census_all_at_reference():
    v = np.tile([1.0, 2.0, 0.0], (20, 1))
    rep = dyadic_shell_census(v, [1.0, 2.0, 0.0], 64.0, 1.0, 0.5, 0.1)
    assert rep.b1_count == 20 and rep.band_count.sum() == 0 and rep.outside == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), p=st.floats(4.0, 200.0), gamma=st.floats(0.1, 0.6))
def test_census_partitions_weight(seed, p, gamma):
    rng = np.random.default_rng(seed)
    v = rng.normal(scale=p / 3, size=(200, 3))
    w = rng.uniform(0, 1, 200)
    rep = dyadic_shell_census(v, [0, 0, 0], p, 1.0, gamma, 0.1, w)
    assert rep.b1 + rep.band_weight.sum() + rep.outside == pytest.approx(w.sum(), rel=1e-12)
    assert rep.m == shell_count(p, gamma)


def test_census_volume_bound_on_sample(small_ensemble):
    vel = small_ensemble.vel
    rep = dyadic_shell_census(vel, [0, 0, 0], 8.0, 1.0, 0.3, 0.1, small_ensemble.weight,
                              f_inf=small_ensemble.f_inf, spatial_volume=7 ** 3, h_v=1.0)
    assert rep.violations == []


# ------------------------------------------------------------- fits and tails
def test_fit_exponent_recovers_power():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_exponent(x, 3.0 * x ** -2.7)
    assert fit.slope == pytest.approx(-2.7, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_fit_linear_recovers_rate():
    n = np.arange(4, 9)
    fit = fit_linear(n, 5.0 * 0.5 ** n)
    assert fit.slope == pytest.approx(-math.log(2), abs=1e-12)


def test_fit_needs_two_points():
    with pytest.raises(ValueError):
        fit_exponent([1.0, 2.0], [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), lam=st.floats(0.1, 3.0), growth=st.floats(0.5, 4.0))
def test_gaussian_tail_bound(seed, lam, growth):
    rng = np.random.default_rng(seed)
    v0 = rng.normal(scale=2, size=(100, 3))
    g = rng.uniform(0, 1, 100)
    f0 = g * np.exp(-lam * np.sum(v0 ** 2, axis=1))
    v1 = growth * v0 + rng.normal(scale=0.5, size=(100, 3))
    stat, lam_bar, c_v = gaussian_tail_stat(f0, v1, lam, v0)
    assert lam_bar == pytest.approx(lam / (2 * c_v ** 2))
    assert stat <= g.max() * math.exp(lam) * (1 + 1e-12)
