from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinkflow.instance import (
    ChainInstance,
    DisorderSpec,
    build_ensemble_instance,
    rescale,
    sample_logical,
    uniform_chain,
)
from kinkflow.oracle import dense_spectrum, even_sector_spectrum
from kinkflow.spectrum import (
    build_generator,
    gap_at,
    griffiths_crossover,
    griffiths_estimate,
    griffiths_walk,
    many_body_levels,
    minimum_gap,
    single_particle_energies,
    spectrum_at,
)


def chain(j):
    j = np.asarray(j, dtype=float)
    return ChainInstance(len(j) + 1, 1, j, j)


# --- generator ------------------------------------------------------------------


def test_generator_pattern():
    inst = chain([0.3, 0.7])
    gen = build_generator(inst, 0.25)
    assert gen.dim == 6
    np.testing.assert_allclose(gen.superdiagonal, [0.75, 0.075, 0.75, 0.175, 0.75])
    m = gen.to_dense()
    np.testing.assert_array_equal(m, -m.T)
    assert m[0, 1] == 0.75 and m[1, 2] == 0.075


def test_driver_only_spectrum():
    res = spectrum_at(sample_logical(7, DisorderSpec.strong(3)), 0.0)
    np.testing.assert_allclose(res.energies, 1.0, rtol=1e-15)


def test_classical_spectrum_has_zero_mode():
    inst = sample_logical(7, DisorderSpec.strong(3))
    res = spectrum_at(inst, 1.0)
    assert res.energies[0] == 0.0
    np.testing.assert_allclose(res.energies[1:], np.sort(inst.couplings), rtol=1e-15)


def test_two_spin_midpoint_against_dense():
    inst = uniform_chain(2)
    levels = many_body_levels(spectrum_at(inst, 0.5).energies)
    np.testing.assert_allclose(levels, dense_spectrum(inst.couplings, 0.5), atol=1e-12)


def test_uniform_four_spins_against_dense():
    inst = uniform_chain(4)
    levels = many_body_levels(spectrum_at(inst, 0.5).energies)
    np.testing.assert_allclose(levels, dense_spectrum(inst.couplings, 0.5), atol=1e-10)


@pytest.mark.parametrize("n", [3, 5, 8])
@pytest.mark.parametrize("s", [0.2, 0.6, 0.9])
def test_many_body_levels_match_dense(n, s):
    inst = sample_logical(n, DisorderSpec.strong(100 + n))
    levels = many_body_levels(spectrum_at(inst, s).energies)
    np.testing.assert_allclose(levels, dense_spectrum(inst.couplings, s), atol=1e-10)


def test_energies_sorted_nonnegative():
    res = spectrum_at(sample_logical(50, DisorderSpec.strong(1)), 0.7)
    assert np.all(res.energies >= 0)
    assert np.all(np.diff(res.energies) >= 0)
    assert res.gap == 2 * (res.energies[0] + res.energies[1])
    assert res.ground_energy == pytest.approx(-res.energies.sum())


def test_both_squared_blocks_share_characteristic_polynomial():
    gen = build_generator(sample_logical(9, DisorderSpec.strong(5)), 0.6)
    even, odd = gen.squared_blocks()
    np.testing.assert_allclose(np.poly(even), np.poly(odd), rtol=1e-10, atol=1e-14)
    # and -M^2 restricted to even / odd indices reproduces them
    m2 = -(gen.to_dense() @ gen.to_dense())
    np.testing.assert_allclose(m2[0::2, 0::2], even, atol=1e-15)
    np.testing.assert_allclose(m2[1::2, 1::2], odd, atol=1e-15)
    eps = single_particle_energies(gen).energies
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(even)), eps**2, rtol=1e-10, atol=1e-15)


def test_skew_eigenvalues_are_plus_minus_i_eps():
    gen = build_generator(sample_logical(10, DisorderSpec.strong(8)), 0.45)
    w = np.linalg.eigvals(gen.to_dense())
    np.testing.assert_allclose(np.abs(w.real), 0, atol=1e-12)
    np.testing.assert_allclose(np.sort(np.abs(w.imag))[0::2], single_particle_energies(gen).energies, rtol=1e-10)


def test_relative_accuracy_on_graded_spectrum():
    # deep in the ordered phase the smallest energy is exponentially small
    inst = sample_logical(40, DisorderSpec.strong(12))
    gen = build_generator(inst, 0.9)
    eps = single_particle_energies(gen).energies
    mpmath.mp.dps = 60
    d, e = gen.bidiagonal()
    n = len(d)
    b = mpmath.zeros(n, n)
    for i in range(n):
        b[i, i] = mpmath.mpf(float(d[i]))
        if i + 1 < n:
            b[i, i + 1] = mpmath.mpf(float(e[i]))
    ev = mpmath.eigsy(b * b.T, eigvals_only=True)
    ref = sorted(float(mpmath.sqrt(abs(x))) for x in ev)
    assert eps[0] < 1e-10
    np.testing.assert_allclose(eps, ref, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(0.1, 10.0), s=st.floats(0.05, 0.95), seed=st.integers(0, 10_000))
def test_energies_scale_linearly(lam, s, seed):
    inst = sample_logical(12, DisorderSpec.strong(seed))
    base = single_particle_energies(build_generator(inst, s)).energies
    scaled = single_particle_energies(build_generator(rescale(inst, lam), s, field=lam)).energies
    np.testing.assert_allclose(scaled, lam * base, rtol=1e-12)


# --- minimum gap ----------------------------------------------------------------


def test_minimum_gap_not_above_dense_grid():
    inst = sample_logical(8, DisorderSpec.strong(42))
    res = minimum_gap(inst, 0.05, 0.98, tol=1e-9)
    grid = np.linspace(0.05, 0.98, 10_000)
    brute = min(gap_at(inst, s) for s in grid)
    assert res.gap <= brute + 1e-9
    assert 0.05 <= res.s_c <= 0.98


def test_minimum_gap_never_above_coarse_grid():
    for seed in range(10):
        inst = build_ensemble_instance(60, 3, seed)
        res = minimum_gap(inst, n_grid=64)
        coarse = min(gap_at(inst, s) for s in np.linspace(0.05, 0.98, 64))
        assert res.gap <= coarse


def test_uniform_chain_gap_location():
    res = minimum_gap(uniform_chain(200))
    assert abs(res.s_c - 0.5) < 0.01
    assert 3 < 200 * res.gap < 7


def test_two_spin_gap_matches_dense():
    inst = uniform_chain(2)
    res = minimum_gap(inst, 0.05, 0.98, tol=1e-10)
    # closed form for two spins: gap(s) = 2 sqrt(4 (1-s)^2 + s^2), minimal at s = 4/5
    assert res.s_c == pytest.approx(0.8, abs=1e-7)
    assert res.gap == pytest.approx(4 / math.sqrt(5), abs=1e-10)
    # first excitation inside the flip-even sector of the dense Hamiltonian
    even = even_sector_spectrum(inst.couplings, res.s_c)
    assert res.gap == pytest.approx(even[1] - even[0], abs=1e-10)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_gap_is_even_sector_gap(seed):
    inst = sample_logical(7, DisorderSpec.strong(seed))
    for s in (0.3, 0.6, 0.8):
        even = even_sector_spectrum(inst.couplings, s)
        assert gap_at(inst, s) == pytest.approx(even[1] - even[0], abs=1e-10)


def test_minimum_gap_validates_range():
    with pytest.raises(ValueError):
        minimum_gap(uniform_chain(4), 0.5, 0.4)


# --- random-walk estimator -------------------------------------------------------


def test_walk_constant_when_field_equals_coupling():
    g = 0.37
    w = griffiths_walk(uniform_chain(20, g), g)
    np.testing.assert_allclose(w, -math.log(g), rtol=1e-13)


def test_walk_shear():
    inst = sample_logical(30, DisorderSpec.strong(2))
    w1 = griffiths_walk(inst, 0.3)
    w2 = griffiths_walk(inst, 0.6)
    k = np.arange(1, len(w1) + 1)
    np.testing.assert_allclose(w1 - w2, k * math.log(2), rtol=1e-13)


def test_zero_drift_walk_spread():
    ends = []
    for seed in range(400):
        inst = sample_logical(400, DisorderSpec.strong(seed))
        # geometric mean of U[0,1] is 1/e, so increments ln J + 1 have zero mean, unit variance
        w = griffiths_walk(inst, 1 / math.e)
        ends.append(w[-1] - w[0])
    ends = np.array(ends)
    sd = math.sqrt(399)
    assert abs(np.mean(ends)) < 3 * sd / math.sqrt(len(ends))
    assert 0.85 * sd < np.std(ends) < 1.15 * sd


def test_estimate_order_relation():
    for seed in range(30):
        inst = sample_logical(200, DisorderSpec.strong(seed))
        est = griffiths_estimate(inst, 0.3)
        if not est.degenerate:
            assert est.eps0 <= est.eps1 * (1 + 1e-12)


def test_estimate_tracks_exact_energies():
    diffs = []
    for seed in range(40):
        inst = sample_logical(512, DisorderSpec.strong(seed))
        s = 0.75
        gamma = (1 - s) / s
        est = griffiths_estimate(inst, gamma)
        eps = spectrum_at(inst, s).energies / s
        diffs.append(math.log(est.eps0) - math.log(eps[0]))
    assert abs(np.median(diffs)) < 3.0


def test_crossover_near_gap_minimum():
    rel = []
    for seed in range(30):
        inst = sample_logical(256, DisorderSpec.strong(seed))
        g_star = griffiths_crossover(inst)
        res = minimum_gap(inst)
        g_c = (1 - res.s_c) / res.s_c
        rel.append(abs(g_star - g_c) / g_c)
    assert np.median(rel) < 0.10


def test_degenerate_profile_flag():
    est = griffiths_estimate(uniform_chain(3, 0.5), 0.5)
    assert est.degenerate
