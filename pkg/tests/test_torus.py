import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab import reference
from cascadelab.torus import (
    FOUR_PI_SQ,
    BallFamily,
    CutoffTooSmall,
    FrequencyBand,
    SpectralField,
    band_estimate_check,
    band_estimate_constant,
    bessel_potential,
    fractional_laplacian_symbol,
    gram_matrix,
    homogeneous_norm,
    lattice,
    leray_project,
    lex_positive,
    perpendicular_frame,
    random_divergence_free,
    sobolev_norm,
    wavelet_family,
)

wave = st.tuples(*[st.integers(-3, 3)] * 3).filter(any)
seeds = st.integers(0, 2**32 - 1)


def test_lattice_layout():
    ks = lattice(3, 2)
    assert ks.shape == (5, 5, 5, 3)
    assert tuple(ks[0, 0, 0]) == (-2, -2, -2)
    assert tuple(ks[2, 2, 2]) == (0, 0, 0)
    assert tuple(ks[4, 3, 1]) == (2, 1, -1)


def test_single_mode_norms_match_closed_form():
    vec = np.array([0.0, 1.0, 0.5j])
    f = SpectralField.from_modes(3, 2, {(1, 0, 0): vec}, symmetrize=False)
    sq = float(np.sum(np.abs(vec) ** 2))
    assert sobolev_norm(f, 1.5) == pytest.approx(math.sqrt((1 + FOUR_PI_SQ) ** 1.5 * sq), rel=1e-14)
    assert homogeneous_norm(f, 2.0) == pytest.approx(math.sqrt(FOUR_PI_SQ**2 * sq), rel=1e-14)
    g = bessel_potential(f, 0.5)
    assert g[(1, 0, 0)] == pytest.approx((1 + FOUR_PI_SQ) ** 0.5 * vec)
    sym = fractional_laplacian_symbol(3, 1, 0.5)
    assert sym[1, 1, 1] == 0.0
    assert sym[2, 2, 2] == pytest.approx(math.sqrt(3 * FOUR_PI_SQ))


@given(k=wave, seed=seeds)
def test_leray_matches_per_mode_reference(k, seed):
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    f = SpectralField.from_modes(3, 3, {k: vec})
    p = leray_project(f)
    assert np.allclose(p[k], reference.leray(k, vec), atol=1e-14)
    assert p.divergence_residual() < 1e-13
    assert np.allclose(leray_project(p).coeffs, p.coeffs, atol=1e-15)


@given(seed=seeds)
def test_random_fields_are_real_divergence_free_and_mean_zero(seed):
    f = random_divergence_free(np.random.default_rng(seed), 3, 3, radius=2.5, decay=1.0)
    assert f.is_real()
    assert f.is_divergence_free(1e-13)
    assert np.all(f[(0, 0, 0)] == 0)
    assert max(sum(x * x for x in k) for k in f.support()) <= 2.5**2


@given(seed=seeds)
def test_json_round_trip(seed):
    f = random_divergence_free(np.random.default_rng(seed), 3, 2)
    g = SpectralField.from_json(f.to_json())
    assert np.array_equal(f.coeffs, g.coeffs)


@given(k=wave)
def test_perpendicular_frame_is_orthonormal_and_sign_invariant(k):
    ks = np.array([k, [-x for x in k]])
    fr = perpendicular_frame(ks, warn=False)
    for f, kk in zip(fr, ks):
        assert np.allclose(f @ f.T, np.eye(2), atol=1e-14)
        assert np.allclose(f @ kk, 0.0, atol=1e-13)
    assert np.array_equal(fr[0], fr[1])
    expect = reference.frame(tuple(k))
    assert np.allclose(fr[0], np.array(expect), atol=1e-14)


def test_lex_positive_splits_nonzero_lattice():
    ks = lattice(3, 2).reshape(-1, 3)
    pos = lex_positive(ks)
    neg = lex_positive(-ks)
    zero = np.all(ks == 0, axis=1)
    assert np.all(pos ^ neg ^ zero)


def test_wavelets_orthonormal_with_exact_band_support():
    fam = BallFamily.default(3, 0.95)
    wl = wavelet_family(fam, 0, 3)
    g = gram_matrix(wl.values())
    assert np.max(np.abs(g - np.eye(len(wl)))) < 1e-12
    for (i, n), w in wl.items():
        # brute-force enumeration over the whole box
        ks = lattice(3, w.field.cutoff).reshape(-1, 3).astype(float)
        lam = 1.95**n
        c, r = lam * fam.centers[i - 1], lam * fam.radii[i - 1]
        inside = (np.linalg.norm(ks - c, axis=1) < r) | (np.linalg.norm(ks + c, axis=1) < r)
        assert w.field.support() == {tuple(int(x) for x in k) for k in ks[inside]}
        assert np.all(w.field[(0, 0, 0)] == 0)
        assert w.field.is_real()
        assert w.field.is_divergence_free(1e-13)


def test_wavelet_family_rejects_small_cutoff():
    with pytest.raises(CutoffTooSmall):
        wavelet_family(BallFamily.default(1), 0, 3, cutoff=3)


def test_ball_family_validation():
    with pytest.raises(ValueError):
        BallFamily(0.5, np.array([[1.1, 0, 0]]), np.array([0.5]))


@given(seed=seeds, kappa=st.floats(-1.0, 1.0), beta=st.floats(0.0, 2.0))
def test_band_localisation_estimate(seed, kappa, beta):
    band = FrequencyBand(BallFamily.default(1), 1, 2)
    f = random_divergence_free(np.random.default_rng(seed), 3, 5)
    lhs, rhs = band_estimate_check(f, band, kappa, beta)
    assert lhs <= band_estimate_constant(band, kappa, beta) * rhs * (1 + 1e-12)
