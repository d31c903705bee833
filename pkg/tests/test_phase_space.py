import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlasov_cutoff.io import load_ensemble, save_ensemble
from vlasov_cutoff.phase_space import (PhysParams, PowerLaw, SamplingSpec, SparsePlateaus,
                                       apply_cutoff, eval_initial_density, from_arrays,
                                       sample_ensemble, velocity_cells)

# Midpoint quadrature of f0^N (lam = C0 = 1, PowerLaw(1, 0.5), r_max = 4,
# h_x = h_v = 1, N = 2) computed by a separate itertools/math.fsum loop over
# the 257 lattice sites and the half-integer velocity centres.
TOTAL_WEIGHT_ORACLE = 157.01829245235476


@pytest.fixture(scope="module")
def unit_setup():
    return PowerLaw(1.0, 0.5), PhysParams(lam=1.0, c0=1.0, epsilon=0.5)


def test_density_at_origin_is_one(unit_setup):
    prof, par = unit_setup
    assert eval_initial_density(prof, par, [0, 0, 0], [0, 0, 0]) == 1.0


def test_density_power_law_tail(unit_setup):
    prof, par = unit_setup
    val = eval_initial_density(prof, par, [2.0, 0, 0], [0, 0, 0])
    assert val == pytest.approx(2.0 ** -2.5, rel=1e-15)
    assert val == pytest.approx(0.1767766952966369, rel=1e-15)


def test_density_decreases_in_speed(unit_setup):
    prof, par = unit_setup
    speeds = np.linspace(0, 30, 301)
    v = np.zeros((speeds.size, 3))
    v[:, 0] = speeds
    vals = eval_initial_density(prof, par, np.zeros_like(v), v)
    assert np.all(np.diff(vals) <= 0)
    assert vals[-1] == 0.0


def test_density_bounded_by_f_inf(unit_setup):
    prof, par = unit_setup
    rng = np.random.default_rng(0)
    x = rng.normal(scale=3, size=(500, 3))
    v = rng.normal(size=(500, 3))
    assert np.all(eval_initial_density(prof, par, x, v) <= par.c0 * prof.sup)


def test_total_weight_matches_quadrature(unit_setup):
    prof, par = unit_setup
    ens = sample_ensemble(prof, par, SamplingSpec(4, 1, 1), 2)
    assert ens.total_weight == pytest.approx(TOTAL_WEIGHT_ORACLE, rel=1e-12)


def test_inactive_cutoff_gives_identical_lists():
    prof = PowerLaw(1.0, 0.5)
    par = PhysParams(lam=40.0, c0=1.0, epsilon=0.5)
    spec = SamplingSpec(3, 1, 1)
    a = sample_ensemble(prof, par, spec, 2)
    b = sample_ensemble(prof, par, spec, 3)
    assert len(a) == len(b)
    np.testing.assert_array_equal(a.pos, b.pos)
    np.testing.assert_array_equal(a.vel, b.vel)
    np.testing.assert_array_equal(a.weight, b.weight)


def test_shell_weight_bound():
    prof = PowerLaw(1.0, 0.5)
    par = PhysParams(lam=0.5, c0=1.0, epsilon=0.5)
    spec = SamplingSpec(4, 1, 0.5)
    ens = sample_ensemble(prof, par, spec, 4)
    spatial = float(np.sum(prof(np.linalg.norm(np.unique(ens.pos, axis=0), axis=1))))
    for n in range(1, 4):
        shell = ens.shell == n + 1
        # volume of the velocity cells in the shell, counted cell by cell
        cells = np.unique(ens.vel[shell], axis=0).shape[0] * spec.h_v ** 3
        bound = par.c0 * math.exp(-par.lam * n * n) * spatial * cells
        assert ens.weight[shell].sum() <= bound * (1 + 1e-12)


def test_rejects_misaligned_velocity_grid():
    with pytest.raises(ValueError, match="align"):
        SamplingSpec(4, 1, 0.3)


def test_rejects_bad_params():
    with pytest.raises(ValueError, match="1/15"):
        PhysParams(1.0, 1.0, 1.2)
    with pytest.raises(ValueError):
        PhysParams(-1.0, 1.0, 0.5)


def test_apply_cutoff_identity_and_filter(unit_setup):
    prof, par = unit_setup
    base = sample_ensemble(prof, par, SamplingSpec(3, 1, 1), 3)
    assert apply_cutoff(base, 3) is base
    sub = apply_cutoff(base, 2)
    expected = int(np.sum(np.linalg.norm(base.vel, axis=1) <= 2))
    assert len(sub) == expected
    np.testing.assert_array_equal(sub.pos, base.pos[:expected])
    with pytest.raises(ValueError):
        apply_cutoff(base, 4)


def test_apply_cutoff_zero_is_empty(unit_setup):
    prof, par = unit_setup
    base = sample_ensemble(prof, par, SamplingSpec(2, 1, 1), 1)
    assert len(apply_cutoff(base, 0)) == 0


def test_velocity_cells_ordered_by_shell():
    cells, shell = velocity_cells(SamplingSpec(2, 1, 0.5), 3)
    assert np.all(np.diff(shell) >= 0)
    speed = np.linalg.norm(cells, axis=1)
    assert np.all(speed <= shell + 1e-12)
    assert np.all(speed > shell - 1 - 1e-12)


def test_weights_bounded_by_linf(unit_setup):
    prof, par = unit_setup
    spec = SamplingSpec(4, 2, 0.5)
    ens = sample_ensemble(prof, par, spec, 3)
    assert np.all(ens.weight <= ens.f_inf * spec.h_x ** 3 * spec.h_v ** 3)


def test_lattice_decay_at_t0():
    from vlasov_cutoff.diagnostics import lattice_masses
    from vlasov_cutoff.estimates import profile_lattice_audit

    prof = PowerLaw(1.0, 0.5)
    par = PhysParams(lam=1.0, c0=1.0, epsilon=0.5)
    ens = sample_ensemble(prof, par, SamplingSpec(9, 1, 1), 2)
    assert profile_lattice_audit(prof, r_max=8).ok
    sites = np.array([(k, 0, 0) for k in range(1, 9)] + [(k, k, 0) for k in range(1, 6)],
                     dtype=float)
    norms = np.linalg.norm(sites, axis=1)
    ratio = lattice_masses(ens, sites) * norms ** 2.5
    # mass |i|^(2+eps) does not grow: the outer sites stay below the inner maximum
    assert ratio[norms > 4].max() <= ratio[norms <= 4].max()
    assert np.all(np.isfinite(ratio)) and np.all(ratio > 0)


def test_sampling_is_deterministic(unit_setup):
    prof, par = unit_setup
    a = sample_ensemble(prof, par, SamplingSpec(3, 1, 0.5), 2)
    b = sample_ensemble(prof, par, SamplingSpec(3, 1, 0.5), 2)
    assert a.pos.tobytes() == b.pos.tobytes()
    assert a.weight.tobytes() == b.weight.tobytes()


def test_sparse_plateaus_profile():
    p = SparsePlateaus.geometric(1.0, 0.5, count=3)
    r = np.array([0.5, 4.0, 5.0, 8.0, 16.0])
    np.testing.assert_allclose(p(r), [1.0, 4.0 ** -2.5, 0.0, 8.0 ** -2.5, 16.0 ** -2.5])
    assert p.sup == 1.0


def test_ensemble_roundtrip(tmp_path, unit_setup):
    prof, par = unit_setup
    ens = sample_ensemble(prof, par, SamplingSpec(2, 1, 1), 2)
    back = load_ensemble(save_ensemble(ens, tmp_path / "ens.txt"))
    np.testing.assert_array_equal(back.pos, ens.pos)
    np.testing.assert_array_equal(back.vel, ens.vel)
    np.testing.assert_array_equal(back.weight, ens.weight)
    assert back.cutoff_n == ens.cutoff_n
    assert back.params == ens.params


def test_from_arrays_rejects_negative_weight():
    with pytest.raises(ValueError):
        from_arrays([[0, 0, 0]], [[0, 0, 0]], [-1.0], PhysParams(1, 1, 0.5))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), m=st.integers(1, 3), h_x=st.sampled_from([1.0, 1.5, 2.0]),
       inv_hv=st.integers(1, 2))
def test_nesting(n, m, h_x, inv_hv):
    lo, hi = sorted((n, m))
    prof = PowerLaw(1.0, 0.8)
    par = PhysParams(lam=0.7, c0=1.0, epsilon=0.8)
    base = sample_ensemble(prof, par, SamplingSpec(3, h_x, 1.0 / inv_hv), 3)
    a, b = apply_cutoff(base, lo), apply_cutoff(base, hi)
    key = lambda e: {tuple(np.r_[p, v]) for p, v in zip(e.pos, e.vel)}
    assert key(a) <= key(b)
    # sampling directly at the lower cutoff gives the same prefix
    direct = sample_ensemble(prof, par, SamplingSpec(3, h_x, 1.0 / inv_hv), lo)
    np.testing.assert_array_equal(direct.weight, a.weight)
    assert np.all(np.linalg.norm(a.vel, axis=1) <= lo + 1e-12)
