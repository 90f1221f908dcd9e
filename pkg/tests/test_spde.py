import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab import cascade, noise, spde
from cascadelab.torus import fractional_laplacian_symbol, random_divergence_free, wavenumber_sq

TH = noise.theta_shell(1, 1.0)
BASIS = noise.NoiseBasis(3)
seeds = st.integers(0, 2**32 - 1)


def u_small(seed=5, cutoff=4, radius=1.0):
    return random_divergence_free(np.random.default_rng(seed), 3, cutoff, radius=radius)


@given(seed=seeds)
def test_stepper_noise_equals_sum_of_single_transports(seed):
    cfg = spde.SpdeConfig(nu=0.5, theta=TH, state_cutoff=4, dissipation=False, corrector=False)
    st_ = spde.SpdeStepper(cfg)
    rng = np.random.default_rng(seed)
    u = random_divergence_free(rng, 3, 4, radius=2.0)
    K = len(st_.kpos)
    dW = rng.standard_normal((K, 2)) + 1j * rng.standard_normal((K, 2))
    out, loss = st_.noise(st_.gather(u.coeffs[None]), dW[None])
    c = math.sqrt(noise.dimension_constant(3) * 0.5) / TH.l2_norm
    ent = TH.entries()
    ref = np.zeros_like(u.coeffs)
    for j, k in enumerate(st_.kpos):
        for i in (1, 2):
            f = noise.noise_apply(BASIS, k, i, u)
            g = noise.noise_apply(BASIS, -k, i, u)
            ref += c * ent[tuple(k)] * (f.coeffs * dW[j, i - 1] + g.coeffs * np.conj(dW[j, i - 1]))
    assert np.max(np.abs(st_.scatter(out)[0] - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))
    assert loss[0] == 0.0


def test_truncation_loss_equals_mass_outside_the_galerkin_ball():
    base = spde.SpdeConfig(nu=0.5, theta=TH, state_cutoff=4, dissipation=False, corrector=False)
    rng = np.random.default_rng(2)
    u = random_divergence_free(rng, 3, 4, radius=3.0)
    K = len(TH.positive()[0])
    dW = (rng.standard_normal((K, 2)) + 1j * rng.standard_normal((K, 2)))[None]
    big = spde.SpdeStepper(base.with_(state_cutoff=7))
    full = big.scatter(big.noise(big.gather(u.resized(7).coeffs[None]), dW)[0])[0]
    ball = spde.SpdeStepper(base.with_(galerkin_N=3.0))
    _, loss = ball.noise(ball.gather(u.coeffs[None]), dW)
    outside = float(np.sum(np.abs(full[wavenumber_sq(3, 7) > 9 + 1e-9]) ** 2))
    assert loss[0] == pytest.approx(outside, rel=1e-12)


@given(alpha=st.sampled_from([0.5, 1.0, 1.5]))
def test_linear_heat_flow_is_exact(alpha):
    u0 = u_small(cutoff=3, radius=3.0)
    cfg = spde.SpdeConfig(alpha=alpha, dt=1e-3, T=0.02, state_cutoff=3)
    rec = spde.simulate(cfg, u0)
    sym = fractional_laplacian_symbol(3, 3, alpha)
    expect = u0.coeffs * np.exp(-0.02 * sym)[..., None]
    assert np.allclose(rec.final.coeffs, expect, rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("enhanced", [True, False])
def test_linear_deterministic_limit_is_the_enhanced_heat_flow(enhanced):
    # -Lambda^2 + (3 nu/5) Delta has symbol -(1 + 3 nu/5) 4 pi^2 |k|^2 at alpha = 1
    u0 = u_small(cutoff=3, radius=3.0)
    cfg = spde.SpdeConfig(alpha=1.0, nu=1.0, theta=TH, dt=1e-3, T=0.05, state_cutoff=3)
    rec = spde.run_deterministic_limit(cfg, u0, record_every=50, enhanced=enhanced)
    factor = 1.6 if enhanced else 1.0
    expect = u0.coeffs * np.exp(-0.05 * factor * 4 * math.pi**2 * wavenumber_sq(3, 3))[..., None]
    assert np.allclose(rec.final.coeffs, expect, rtol=1e-12, atol=1e-15)


def test_ensemble_mean_follows_the_averaged_semigroup():
    u0 = u_small(seed=7, radius=1.5)
    cfg = spde.SpdeConfig(alpha=1.0, nu=1.0, theta=TH, dt=1e-3, T=0.02, state_cutoff=4, galerkin_N=4.0)
    res = spde.ensemble_mean_field(cfg, u0, 400, 11, sample_every=5)
    refs = spde.semigroup_matrix_reference(cfg, u0, res.times)
    chk = spde.compare_mean_field(res, refs, u0)
    assert chk.ok, (chk.projection_z, chk.distance_ratio)
    # without the corrector the mean follows the heat flow instead, which the check must reject
    heat = spde.semigroup_matrix_reference(cfg.with_(corrector=False), u0, res.times)
    assert not spde.compare_mean_field(res, heat, u0).ok


def test_ensemble_trajectories_do_not_depend_on_chunking():
    u0 = u_small()
    cfg = spde.SpdeConfig(nu=1.0, theta=TH, dt=1e-3, T=0.005, state_cutoff=4, galerkin_N=4.0)
    a = spde.ensemble_mean_field(cfg, u0, 20, 3, chunk=7)
    b = spde.ensemble_mean_field(cfg, u0, 20, 3, chunk=64)
    assert np.allclose(a.mean, b.mean, rtol=0, atol=1e-15)
    # trajectory j of the ensemble is the simulate() run seeded with its ledger seed
    single = spde.ensemble_mean_field(cfg, u0, 1, 3)
    rec = spde.simulate(cfg, u0, spde.trajectory_seed(3, 0))
    assert np.allclose(single.mean[-1], rec.final.coeffs, atol=1e-14)


def test_simulate_is_deterministic_per_seed():
    u0 = u_small()
    cfg = spde.SpdeConfig(nu=1.0, theta=TH, dt=1e-3, T=0.01, state_cutoff=4)
    a, b = spde.simulate(cfg, u0, 42), spde.simulate(cfg, u0, 42)
    c = spde.simulate(cfg, u0, 43)
    assert np.array_equal(a.final.coeffs, b.final.coeffs)
    assert not np.array_equal(a.final.coeffs, c.final.coeffs)
    assert a.divergence_residual < 1e-12 and a.reality_residual < 1e-12
    assert a.final.is_real() and a.final.is_divergence_free(1e-12)


def test_one_step_energy_defect_is_second_order():
    # transport noise plus corrector conserves E||u||^2 in continuous time;
    # one exponential Euler step misses it by O(dt^2)
    u0 = u_small()
    e0 = u0.norm() ** 2
    defects = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        cfg = spde.SpdeConfig(nu=1.0, theta=TH, dt=dt, T=dt, state_cutoff=4, galerkin_N=4.0, dissipation=False)
        total, lost = spde.expected_step_energy(cfg, u0)
        defects.append(abs((total + lost) / e0 - 1.0))
    r1, r2 = defects[0] / defects[1], defects[1] / defects[2]
    assert 3.5 < r1 < 4.5 and 3.5 < r2 < 4.5


def test_monte_carlo_energy_is_conserved_at_small_step():
    u0 = u_small(cutoff=5)
    cfg = spde.SpdeConfig(nu=1.0, theta=TH, dt=1e-6, T=1e-5, state_cutoff=5, galerkin_N=5.0, dissipation=False)
    res = spde.ensemble_mean_field(cfg, u0, 1000, 3, sample_every=10, track_truncation=True)
    e0 = u0.norm() ** 2
    got = res.l2_sq_mean[-1] + res.truncation_loss / res.M
    assert abs(got - e0) <= 4 * res.l2_sq_stderr[-1] + 1e-12 * e0


def test_strong_order_one_half():
    cfg = spde.SpdeConfig(alpha=1.0, nu=0.1, theta=TH, dt=4e-3, T=0.016, state_cutoff=4, galerkin_N=4.0)
    study = spde.strong_error_study(cfg, u_small(), range(20), levels=4, ref_refinement=3)
    assert np.all(np.diff(study.errors) < 0)
    assert study.slope >= 0.45


def test_energy_equality_for_deterministic_cascade():
    casc = cascade.default_config(m=1, n_min=0, n_top=2)
    x = np.zeros((1, 3))
    x[0, 1] = 100.0
    u0 = cascade.synthesize(casc, x)
    rec = spde.run_deterministic_limit(spde.SpdeConfig(cascade=casc, dt=1e-4, T=0.02), u0, record_every=20)
    e0 = u0.norm() ** 2
    balance = rec.l2**2 + rec.dissipation_integral - e0
    assert np.max(np.abs(balance)) <= 1e-6 * e0


def test_diagnostics_match_direct_projections():
    casc = cascade.default_config(m=2, n_min=0, n_top=2)
    u = cascade.random_span_field(casc, np.random.default_rng(1))
    X = spde.wavelet_coefficients(casc, u.coeffs[None])[0]
    assert np.allclose(X, cascade.coefficients(casc, u))
    E = spde.band_energies(casc, u.coeffs[None])[0]
    for i in (1, 2):
        for n in range(3):
            w = casc.wavelet(i, n)
            vals = u.coeffs[tuple((w.points + casc.cutoff).T)]
            assert E[i - 1, n] == pytest.approx(0.5 * float(np.sum(np.abs(vals) ** 2)), rel=1e-12)


def test_blowup_is_raised_or_reported():
    casc = cascade.default_config(m=1, n_min=0, n_top=2)
    x = np.zeros((1, 3))
    x[0, 1] = 1e6
    v0 = cascade.synthesize(casc, x)
    cfg = spde.SpdeConfig(alpha=0.5, cascade=casc, dt=1e-2, T=1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(spde.BlowUpSuspected):
            spde.simulate(cfg, v0)
        rec = spde.simulate(cfg, v0, raise_on_blowup=False)
    assert rec.blowup_time is not None and rec.blowup_time < 1.0


def test_delayed_blowup_table_uses_common_seeds():
    casc = cascade.default_config(m=1, n_min=0, n_top=2)
    x = np.zeros((1, 3))
    x[0, 1] = 50.0
    v0 = cascade.synthesize(casc, x)
    cfg = spde.SpdeConfig(alpha=0.5, theta=TH, cascade=casc, dt=1e-3, T=0.01, cutoff=spde.CutoffFn(100.0))
    table = spde.delayed_blowup_experiment(cfg, v0, [0.0, 0.5], [1, 2, 3], threshold=1e9)
    assert len(table.rows) == 6
    assert set(table.fractions()) == {0.0, 0.5}
    assert all(0.0 <= f <= 1.0 for f in table.survival().values())


def test_energy_bound_constant_is_stable_under_refinement():
    cfg = spde.SpdeConfig(nu=1.0, theta=TH, dt=1e-3, T=0.02, state_cutoff=4, galerkin_N=4.0)
    consts = spde.energy_constant_drift(cfg, u_small(), 5, refinements=2)
    assert len(consts) == 3
    assert max(consts) / min(consts) < 1.05
    rec = spde.simulate(cfg, u_small(), 5)
    rep = spde.energy_bound_check(rec, u_small())
    assert rep.finite and rep.lhs >= rep.sup_l2_sq


def test_cutoff_function_and_config_validation():
    f = spde.CutoffFn(2.0)
    assert np.allclose(f([0.0, 2.0, 2.5, 3.0, 9.0]), [1.0, 1.0, 0.5, 0.0, 0.0])
    with pytest.raises(ValueError):
        spde.SpdeConfig(dt=0.0)
    with pytest.raises(ValueError):
        spde.SpdeConfig(state_cutoff=3, galerkin_N=4.0)
    with pytest.raises(ValueError):
        spde.SpdeConfig(nu=-1.0)
