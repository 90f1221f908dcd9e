import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab import noise, reference
from cascadelab.torus import lattice, random_divergence_free

BASIS = noise.NoiseBasis(3)
seeds = st.integers(0, 2**32 - 1)


def as_modes(f):
    return {k: np.array(f[k]) for k in f.support()}


def dict_to_field(d, dim, cutoff):
    arr = np.zeros((2 * cutoff + 1,) * dim + (dim,), dtype=complex)
    for k, v in d.items():
        if max(abs(x) for x in k) <= cutoff:
            arr[tuple(x + cutoff for x in k)] += v
    return arr


@pytest.mark.parametrize("N,lam", [(1, 0.0), (2, 1.0), (3, 2.0)])
def test_theta_shell_matches_reference_enumeration(N, lam):
    th = noise.theta_shell(N, lam)
    assert th.entries() == pytest.approx(reference.shell_theta(N, lam))


def test_theta_validation():
    with pytest.raises(ValueError):
        noise.ThetaSequence.from_entries(3, {(1, 0, 0): 1.0})
    with pytest.raises(ValueError):
        noise.ThetaSequence.from_entries(3, {(1, 0, 0): 1.0, (-1, 0, 0): 1.0, (0, 1, 0): 2.0, (0, -1, 0): 2.0})


@given(k=st.tuples(*[st.integers(-4, 4)] * 3).filter(any))
def test_basis_frames(k):
    fr = BASIS.vectors(np.array([k, [-x for x in k]]))
    assert np.array_equal(fr[0], fr[1])
    assert np.allclose(fr[0] @ np.array(k, dtype=float), 0, atol=1e-13)
    assert np.allclose(fr[0] @ fr[0].T, np.eye(2), atol=1e-14)


def test_brownian_driver_is_seeded_and_conjugate_symmetric():
    th = noise.theta_shell(1, 1.0)
    a = noise.BrownianDriver(th, 9).step(0.1)
    b = noise.BrownianDriver(th, 9).step(0.1)
    assert np.array_equal(a, b)
    inc = noise.brownian_increments(noise.BrownianDriver(th, 9), 0.1)
    for (k, i), w in inc.items():
        assert inc[(tuple(-x for x in k), i)] == pytest.approx(np.conj(w))


def test_brownian_covariance_small_sample():
    th = noise.theta_shell(1, 1.0)
    drv = noise.BrownianDriver(th, 4)
    dt, n = 0.5, 20000
    w = np.array([drv.step(dt)[0, 0] for _ in range(n)])
    # [W^k, W^-k] = E |W^k|^2 = 2 dt and [W^k, W^k] = 0
    assert abs(np.mean(np.abs(w) ** 2) - 2 * dt) < 4 * np.std(np.abs(w) ** 2) / math.sqrt(n)
    assert abs(np.mean(w * w)) < 4 * 2 * dt / math.sqrt(n)
    with pytest.raises(ValueError):
        drv.step(0.0)


@given(seed=seeds, i=st.sampled_from([1, 2]))
def test_noise_apply_matches_dictionary_transport(seed, i):
    rng = np.random.default_rng(seed)
    u = random_divergence_free(rng, 3, 3, radius=2.0)
    k = (1, -1, 0)
    got, loss = noise.noise_apply(BASIS, k, i, u, return_loss=True)
    a = BASIS.a(k, i)
    full = reference.transport(k, a, as_modes(u))
    assert np.allclose(got.coeffs, dict_to_field(full, 3, 3), atol=1e-12)
    outside = sum(float(np.sum(np.abs(v) ** 2)) for m, v in full.items() if max(map(abs, m)) > 3)
    assert loss == pytest.approx(outside, rel=1e-12, abs=1e-20)


@given(seed=seeds, N=st.sampled_from([1, 2]), lam=st.sampled_from([0.0, 1.0]))
def test_corrector_matches_literal_double_composition(seed, N, lam):
    rng = np.random.default_rng(seed)
    u = random_divergence_free(rng, 3, 2, radius=1.8)
    th = noise.theta_shell(N, lam)
    got = noise.corrector_apply(th, BASIS, 0.7, u)
    ref = reference.corrector(th.entries(), 0.7, as_modes(u))
    # the corrector is frequency preserving: nothing lands outside the support of u
    assert all(np.allclose(v, 0, atol=1e-10) for m, v in ref.items() if m not in u.support())
    assert np.allclose(got.coeffs, dict_to_field(ref, 3, 2), atol=1e-10)


@given(seed=seeds)
def test_transport_energy_matches_reference_sum(seed):
    u = random_divergence_free(np.random.default_rng(seed), 3, 2, radius=1.8)
    th = noise.theta_shell(1, 1.0)
    assert noise.transport_energy(th, BASIS, 0.3, u) == pytest.approx(
        reference.transport_norms(th.entries(), 0.3, as_modes(u)), rel=1e-12
    )


@given(seed=seeds, N=st.sampled_from([1, 2, 4]), lam=st.sampled_from([0.0, 1.0]))
def test_corrector_energy_identity_without_factor_two(seed, N, lam):
    # <u, S u> = -(C_d nu/|theta|^2) sum theta^2 |Pi(sigma.grad)u|^2
    u = random_divergence_free(np.random.default_rng(seed), 3, 3, radius=3.0)
    th = noise.theta_shell(N, lam)
    lhs = u.inner(noise.corrector_apply(th, BASIS, 1.0, u))
    assert lhs == pytest.approx(-noise.transport_energy(th, BASIS, 1.0, u), rel=1e-10)


def test_corrector_keeps_fields_real_and_divergence_free():
    u = random_divergence_free(np.random.default_rng(1), 3, 3)
    s = noise.corrector_apply(noise.theta_shell(2, 1.0), BASIS, 1.0, u)
    assert s.is_real(1e-12)
    assert s.is_divergence_free(1e-12)


def test_corrector_of_isotropic_shell_is_dissipative_per_mode():
    th = noise.theta_shell(2, 1.0)
    ls = lattice(3, 2).reshape(-1, 3).astype(float)
    ls = ls[np.any(ls != 0, axis=1)]
    M = noise.corrector_matrices(th, BASIS, 1.0, ls)
    # restricted to the divergence-free plane l^perp the quadratic form is nonpositive
    P = np.eye(3)[None] - ls[:, :, None] * ls[:, None, :] / np.sum(ls**2, axis=1)[:, None, None]
    Q = P @ (0.5 * (M + np.transpose(M, (0, 2, 1)))) @ P
    assert np.max(np.linalg.eigvalsh(Q)) <= 1e-10 * np.max(np.abs(M))


def test_scaling_limit_converges_to_three_fifths_laplacian():
    phi = noise.single_mode((1, 0, 0))
    errs = [noise.corrector_limit_error(N, 1.0, 1.0, phi, relative=True) for N in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] == pytest.approx(0.008221223754440385, rel=1e-6)


def test_limit_operator_closed_form():
    phi = noise.single_mode((0, 2, 1), cutoff=3)
    out = noise.limit_operator(phi, 2.0)
    assert np.allclose(out[(0, 2, 1)], -0.6 * 2.0 * 4 * math.pi**2 * 5 * phi[(0, 2, 1)])


def test_single_mode_is_unit_real_divergence_free():
    phi = noise.single_mode((1, 2, 0), amplitude=3.0)
    assert phi.norm() == pytest.approx(3.0)
    assert phi.is_real() and phi.is_divergence_free(1e-14)


@given(k=st.tuples(*[st.integers(-3, 3)] * 3))
def test_shift_slices_move_modes(k):
    cut = 2
    arr = np.arange((2 * cut + 1) ** 3).reshape((2 * cut + 1,) * 3)
    src, dst = noise.shift_slices(cut, k)
    out = np.full_like(arr, -1)
    out[dst] = arr[src]
    ls = lattice(3, cut).reshape(-1, 3)
    for l in ls:
        tgt = l + np.array(k)
        if np.all(np.abs(tgt) <= cut):
            assert out[tuple(tgt + cut)] == arr[tuple(l + cut)]
