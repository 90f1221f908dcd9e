from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cascadelab import hypotheses as hy
from cascadelab.hypotheses import Constraint

VARS = ["x", "y", "z"]


def lp_feasible(cons):
    """Independent oracle: maximise a common slack t <= 1 over the strict rows."""
    n = len(VARS)
    A, b = [], []
    for c in cons:
        row = [-float(c.coeffs.get(v, 0)) for v in VARS] + [1.0 if c.strict else 0.0]
        A.append(row)
        b.append(float(c.const))
    res = linprog(
        c=[0.0] * n + [-1.0], A_ub=np.array(A), b_ub=np.array(b),
        bounds=[(None, None)] * n + [(None, 1.0)], method="highs",
    )
    if res.status == 2:
        return False
    return res.status == 0 and -res.fun > 1e-9 or (res.status == 0 and not any(c.strict for c in cons))


coef = st.integers(-3, 3)
constraint = st.builds(
    lambda a, b, c, k, s: Constraint(
        {v: Fraction(x) for v, x in zip(VARS, (a, b, c)) if x}, Fraction(k), s, frozenset([f"c{a}{b}{c}{k}{s}"])
    ),
    coef, coef, coef, st.integers(-4, 4), st.booleans(),
)


@given(cons=st.lists(constraint, min_size=1, max_size=7))
def test_elimination_agrees_with_linear_programming(cons):
    sol = hy.solve(cons, VARS)
    assert sol.feasible == lp_feasible(cons)
    if sol.feasible:
        assert all(c.holds(sol.point) for c in cons)
    else:
        cert = sol.certificate
        assert not cert.coeffs
        assert cert.const < 0 or (cert.const == 0 and cert.strict)


@pytest.mark.parametrize(
    "hyp,value,strict",
    [("H1", Fraction(1, 8), True), ("H2p", Fraction(501, 4000), True), ("H3p", Fraction(1, 8), True),
     ("H4", Fraction(1, 4), True), ("NSE", Fraction(1, 4), False)],
)
def test_exact_boundaries(hyp, value, strict):
    b = hy.boundary(hyp)
    assert (b.value, b.strict) == (value, strict)


@pytest.mark.parametrize("delta", ["1/10", "1/100", "1/1000"])
def test_h2p_boundary_moves_with_delta(delta):
    d = Fraction(delta)
    assert hy.boundary("H2p", d).value == Fraction(1, 8) + d / 4


@pytest.mark.parametrize(
    "hyp,expected",
    [("H1", [0, 0, 1, 1, 1, 1]), ("H2p", [0, 0, 1, 1, 1, 1]), ("H3p", [0, 0, 1, 1, 1, 1]),
     ("H4", [0, 0, 0, 0, 1, 1]), ("NSE", [0, 0, 0, 1, 1, 1])],
)
def test_verdict_table(hyp, expected):
    rhos = ["0", "0.125", "0.13", "0.25", "0.26", "1"]
    assert [int(hy.check_at(hyp, r).passed) for r in rhos] == expected


@given(a=st.fractions(0, 1, max_denominator=64), b=st.fractions(0, 1, max_denominator=64),
       hyp=st.sampled_from(hy.HYPOTHESES))
def test_verdicts_are_monotone_in_rho(a, b, hyp):
    lo, hi = min(a, b), max(a, b)
    if hy.check_at(hyp, lo).passed:
        assert hy.check_at(hyp, hi).passed


@given(rho=st.fractions(0, 1, max_denominator=200), hyp=st.sampled_from(hy.HYPOTHESES))
def test_verdict_agrees_with_closed_form_boundary(rho, hyp):
    assert hy.check_at(hyp, rho).passed == hy.boundary(hyp).admits(rho)


@given(rho=st.fractions(Fraction(1, 4), 1, max_denominator=50), hyp=st.sampled_from(hy.HYPOTHESES))
def test_witness_satisfies_one_system(rho, hyp):
    v = hy.check_at(hyp, rho)
    if v.passed:
        point = dict(v.witness)
        point[hy.RHO] = v.rho
        prob = hy.ExponentProblem(rho=v.rho, hypothesis=hyp)
        assert any(all(c.holds(point) for c in s.constraints) for s in hy.systems(prob))
        assert v.slack > 0 or hyp == "NSE"


def test_failing_verdict_names_violated_constraints():
    v = hy.check_at("H1", "0.1")
    assert not v.passed and v.violated
    doc = v.to_json_dict()
    assert doc["pass"] is False and doc["violated"]


def test_bisection_thresholds():
    assert hy.threshold("H1", 1e-7) == pytest.approx(0.125, abs=1e-6)
    assert hy.threshold("H4", 1e-7) == pytest.approx(0.25, abs=1e-6)
    assert hy.threshold("NSE", 1e-7) == pytest.approx(0.25, abs=1e-6)


def test_nse_slack_at_one():
    assert hy.check_nse(1).slack == Fraction(1, 4)


def test_names_and_ranges():
    assert hy.canonical_name("H2'") == "H2p"
    assert hy.canonical_name("NSE-Temam") == "NSE"
    with pytest.raises(hy.UnknownHypothesis):
        hy.canonical_name("H9")
    assert hy.parse_rho_range("0..0.1:0.05") == [Fraction(0), Fraction(1, 20), Fraction(1, 10)]
    assert hy.parse_rho_range("0.2") == [Fraction(1, 5)]
    with pytest.raises(ValueError):
        hy.parse_rho_range("0..1:0")
