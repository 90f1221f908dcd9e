import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab import reference, shell
from cascadelab.cascade import dyadic_default
from cascadelab.shell import CascadeDiagnostics

amps = st.lists(st.floats(-2, 2), min_size=2, max_size=8).map(np.array)


@given(u=amps, a=st.sampled_from([0.0, 0.5, 1.0]), nu=st.floats(0, 2), n_min=st.integers(-1, 2))
def test_rhs_matches_term_by_term_reference(u, a, nu, n_min):
    s = shell.ShellState(n_min, u, lam=2.0, diss_exp=a, nu_d=nu)
    expect = reference.shell_rhs(u, 2.0, a, nu, n_min)
    assert np.allclose(shell.dyadic_rhs(s), expect, rtol=1e-12, atol=1e-12)


@given(u=amps)
def test_quadratic_part_conserves_energy(u):
    s = shell.ShellState(0, u)
    flux = shell.nonlinear_flux(s)
    assert abs(float(u @ flux)) <= 1e-12 * max(1.0, float(np.sum(np.abs(u[:, None] * flux))))


def test_linear_run_matches_exponential_decay():
    u0 = np.array([1.0, -0.5, 0.25])
    s = shell.ShellState(0, u0, lam=2.0, diss_exp=1.0, nu_d=0.7, nonlinear=False)
    tr = shell.integrate(s, 0.3, 1e-3, stop_on_decay=False, proxy_threshold=None)
    rates = 0.7 * 2.0 ** (2.0 * np.arange(3))
    assert np.allclose(tr.u[-1], u0 * np.exp(-rates * 0.3), rtol=1e-9)


def test_two_shell_transfer_closed_form():
    # u0' = -lam^(5/2) u0 u1, u1' = lam^(5/2) u0^2 with u0(0)=1, u1(0)=0:
    # u0 = sech(g t), u1 = tanh(g t), g = lam^(5/2)
    s = shell.ShellState(0, np.array([1.0, 0.0]), lam=2.0, nu_d=0.0)
    tr = shell.integrate(s, 0.5, 1e-3, proxy_threshold=None)
    g = 2.0**2.5
    assert tr.u[-1] == pytest.approx([1 / math.cosh(g * 0.5), math.tanh(g * 0.5)], rel=1e-8)


def test_small_data_decays_monotonically():
    s = shell.ShellState.single_shell(0, 8, 2, 0.01, lam=2.0, diss_exp=1.0, nu_d=1.0)
    tr = shell.integrate(s, 10.0, 1e-3, proxy_threshold=None)
    norms = np.sqrt(tr.energy)
    assert tr.decay and tr.reason == "decayed"
    assert np.all(np.diff(norms) < 0)


def test_inviscid_cascade_grows_and_conserves_energy():
    s = shell.ShellState.single_shell(0, 30, 0, 1.0, lam=2.0, diss_exp=0.0, nu_d=0.0)
    p0 = shell.sobolev_proxy(s, 2.1)
    tr = shell.integrate(s, 10.0, 1e-4, proxy_threshold=1e6 * p0)
    assert tr.blowup and tr.reason == "proxy-threshold"
    assert tr.proxy[-1] >= 1e6 * p0
    assert np.max(np.abs(tr.energy - 1.0)) <= 1e-6


def test_step_underflow_flag_and_exception():
    s = shell.ShellState.single_shell(0, 30, 0, 1.0, lam=2.0, diss_exp=0.0, nu_d=0.0)
    tr = shell.integrate(s, 10.0, 1e-3, proxy_threshold=None, dt_min=1e-9)
    assert tr.blowup and tr.reason == "step-underflow"
    with pytest.raises(shell.StepUnderflow):
        shell.integrate(s, 10.0, 1e-3, proxy_threshold=None, dt_min=1e-9, raise_on_underflow=True)


def test_rows_layout():
    s = shell.ShellState(1, np.array([0.1, 0.2]))
    tr = shell.integrate(s, 0.01, 1e-3, stop_on_decay=False)
    header, rows = tr.to_rows(1)
    assert header == ["t", "u_1", "u_2", "energy", "proxy_s"]
    assert len(rows) == len(tr.times)


@given(x=st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_cascade_rhs_dyadic_closed_form(x):
    # dX_n/dt = lam^(5(n-1)/2) X_(n-1)^2 - lam^(5n/2) X_n X_(n+1) for the dyadic constants
    X = np.array(x).reshape(1, 4)
    lam = 1.95
    out = shell.cascade_rhs(CascadeDiagnostics(0, X), dyadic_default(1), 0.95, dissipation=None)
    expect = np.zeros(4)
    for n in range(4):
        if n > 0:
            expect[n] += lam ** (2.5 * (n - 1)) * X[0, n - 1] ** 2
        if n < 3:
            expect[n] -= lam ** (2.5 * n) * X[0, n] * X[0, n + 1]
    assert np.allclose(out[0], expect, rtol=1e-12, atol=1e-12)


def test_dissipation_coefficients_bounds():
    lo = shell.dissipation_coefficients(0, 3, 0.95, 0.0)
    hi = shell.dissipation_coefficients(0, 3, 0.95, 1.0)
    assert lo == pytest.approx(4 * math.pi**2 * 1.95 ** (2 * np.arange(3)))
    assert hi == pytest.approx(lo * 1.475**2)


def test_lemma_bounds_on_a_spectral_trajectory():
    from cascadelab import cascade, spde

    casc = cascade.default_config(m=1, n_min=0, n_top=2)
    x = np.zeros((1, 3))
    x[0, 1] = 20.0
    u0 = cascade.synthesize(casc, x)
    rec = spde.run_deterministic_limit(spde.SpdeConfig(alpha=1.0, cascade=casc, dt=1e-4, T=0.02), u0, record_every=10)
    rep = shell.lemma_bounds_check(rec.times, rec.X, rec.E, n_min=0, n0=1, eps0=0.95, tol=1e-9)
    assert rep.lower_margin >= -1e-9
    assert rep.upper_margin >= -1e-9
    assert rep.below_n0_max <= 1e-9
