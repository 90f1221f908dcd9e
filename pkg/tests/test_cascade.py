import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadelab import cascade
from cascadelab.shell import CascadeDiagnostics, cascade_rhs

CFG = cascade.default_config(m=2, n_min=0, n_top=3)
coeff = st.lists(st.floats(-3, 3), min_size=CFG.nslots, max_size=CFG.nslots).map(
    lambda v: np.array(v).reshape(CFG.family.m, CFG.nscales)
)


def test_dyadic_constants_are_valid():
    assert cascade.validate(cascade.dyadic_default(3)).ok


def test_validate_reports_broken_constants():
    bad = cascade.StructureConstants(1, {(1, 1, 1, 0, 0, 1): 1.0, (1, 1, 1, 1, 0, 0): -0.5})
    kinds = {v.kind for v in cascade.validate(bad).violations}
    assert kinds == {"symmetry", "cancellation"}


def test_constants_json_round_trip():
    c = cascade.dyadic_default(2)
    back = cascade.StructureConstants.from_json(c.to_json())
    assert back.entries == c.entries


@given(x=coeff)
def test_synthesis_inverts_coefficients(x):
    assert np.allclose(cascade.coefficients(CFG, cascade.synthesize(CFG, x)), x, atol=1e-12)


@given(x=coeff)
def test_output_coefficients_match_nested_loop_oracle(x):
    # the wavelet coefficients of C(u,u) follow the explicit coupling sum
    out = cascade.coefficients(CFG, cascade.apply(CFG, cascade.synthesize(CFG, x), cascade.synthesize(CFG, x)))
    expect = cascade_rhs(
        CascadeDiagnostics(CFG.n_min, x), CFG.constants, CFG.family.eps0, dissipation=None
    )
    assert np.allclose(out, expect, rtol=1e-12, atol=1e-9 * max(1.0, np.max(np.abs(expect))))


@given(x=coeff)
def test_cancellation(x):
    u = cascade.synthesize(CFG, x)
    assert abs(cascade.apply(CFG, u, u).inner(u)) <= cascade.cancellation_tolerance(CFG, u.norm())


@given(x=coeff, y=coeff)
def test_symmetry(x, y):
    u, v = cascade.synthesize(CFG, x), cascade.synthesize(CFG, y)
    a, b = cascade.apply(CFG, u, v), cascade.apply(CFG, v, u)
    assert (a - b).norm() <= 1e-12 * max(a.norm(), 1e-300)


def test_output_is_real_divergence_free_and_in_the_span():
    u = cascade.random_span_field(CFG, np.random.default_rng(3))
    c = cascade.apply(CFG, u, u)
    assert c.is_real()
    assert c.is_divergence_free(1e-12)
    back = cascade.synthesize(CFG, cascade.coefficients(CFG, c))
    assert (back - c).norm() <= 1e-12 * c.norm()


def test_strict_mode_reports_flux_past_the_top_scale():
    x = np.zeros((CFG.family.m, CFG.nscales))
    x[0, -1] = 1.0
    u = cascade.synthesize(CFG, x)
    _, rep = cascade.apply_report(CFG, u, u)
    assert rep.truncated_terms > 0 and rep.truncated_norm > 0
    with pytest.raises(cascade.ScaleOverflow):
        cascade.apply(CFG, u, u, strict=True)


def test_rho_zero_reduces_to_plain_operator():
    u = cascade.random_span_field(CFG, np.random.default_rng(4))
    assert np.allclose(cascade.apply_rho(CFG, u).coeffs, cascade.apply(CFG, u, u).coeffs, atol=1e-12)


def test_rho_operator_is_bessel_conjugate():
    from cascadelab.torus import bessel_potential

    cr = CFG.with_rho(0.3)
    u = cascade.random_span_field(CFG, np.random.default_rng(5))
    v = bessel_potential(u, 0.3)
    expect = bessel_potential(cascade.apply(CFG, u, u), 0.3)
    assert np.allclose(cascade.apply_rho(cr, v).coeffs, expect.coeffs, rtol=1e-10, atol=1e-10 * expect.norm())


def test_incompatible_field_rejected():
    from cascadelab.torus import SpectralField

    with pytest.raises(ValueError):
        cascade.apply(CFG, SpectralField.zeros(3, 2), SpectralField.zeros(3, 2))
