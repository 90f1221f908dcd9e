"""Exponent bookkeeping for the well-posedness hypotheses of ``F_rho``.

Each hypothesis becomes a system of linear inequalities in interpolation
exponents, with the regularity shift ``rho`` as a parameter. Feasibility is
decided by Fourier-Motzkin elimination over exact rationals, tracking
strict and non-strict inequalities separately, so that boundary cases such
as ``rho = 1/8`` are never decided by rounding. A feasible system yields a
witness by back substitution; an infeasible one yields the constraints that
combine into the contradiction.

Hypothesis names: ``H1``, ``H2p``, ``H3p``, ``H4`` and ``NSE`` (the
Navier-Stokes comparison built on the classical trilinear estimate with
Sobolev slots ``m1``, ``m2 + 1``, ``m3``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

Number = Fraction | int | float | str

HYPOTHESES = ("H1", "H2p", "H3p", "H4", "NSE")
_ALIASES = {
    "H1": "H1",
    "H2p": "H2p",
    "H2'": "H2p",
    "H3p": "H3p",
    "H3'": "H3p",
    "H4": "H4",
    "NSE": "NSE",
    "NSE-Temam": "NSE",
}

RHO = "rho"


class UnknownHypothesis(ValueError):
    """The hypothesis name is not in the constraint library."""


class NonMonotone(RuntimeError):
    """A pass at some ``rho`` is followed by a fail at a larger ``rho``."""


def canonical_name(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise UnknownHypothesis(f"unknown hypothesis {name!r}; choose from {', '.join(HYPOTHESES)}") from None


def as_fraction(x: Number) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float (by its shortest repr)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


# ---------------------------------------------------------------------------
# linear constraints


@dataclass(frozen=True)
class Constraint:
    """``sum_v coeffs[v] * v + const`` is ``> 0`` (strict) or ``>= 0``.

    ``sources`` names the original constraints this one was derived from.
    """

    coeffs: Mapping[str, Fraction]
    const: Fraction
    strict: bool
    sources: frozenset[str]

    @property
    def name(self) -> str:
        return ",".join(sorted(self.sources))

    def value(self, point: Mapping[str, Fraction]) -> Fraction:
        return self.const + sum((c * point[v] for v, c in self.coeffs.items()), Fraction(0))

    def holds(self, point: Mapping[str, Fraction]) -> bool:
        val = self.value(point)
        return val > 0 if self.strict else val >= 0

    def substitute(self, var: str, value: Fraction) -> "Constraint":
        if var not in self.coeffs:
            return self
        coeffs = {v: c for v, c in self.coeffs.items() if v != var}
        return Constraint(coeffs, self.const + self.coeffs[var] * value, self.strict, self.sources)

    def scaled(self, s: Fraction) -> "Constraint":
        return Constraint({v: s * c for v, c in self.coeffs.items()}, s * self.const, self.strict, self.sources)

    def key(self) -> tuple:
        return tuple(sorted(self.coeffs.items()))


def _expr(terms: Mapping[str, Number] | None = None, const: Number = 0) -> tuple[dict[str, Fraction], Fraction]:
    coeffs = {v: as_fraction(c) for v, c in (terms or {}).items() if as_fraction(c) != 0}
    return coeffs, as_fraction(const)


class System:
    """Builder for a named list of linear constraints."""

    def __init__(self, variables: Sequence[str]):
        self.variables = list(variables)
        self.constraints: list[Constraint] = []
        self.equalities: set[str] = set()

    def _add(self, name: str, terms, const, strict):
        coeffs, c = _expr(terms, const)
        self.constraints.append(Constraint(coeffs, c, strict, frozenset([name])))

    def ge(self, name: str, terms, const: Number = 0):
        """``terms + const >= 0``."""
        self._add(name, terms, const, False)

    def gt(self, name: str, terms, const: Number = 0):
        """``terms + const > 0``."""
        self._add(name, terms, const, True)

    def eq(self, name: str, terms, const: Number = 0):
        self.equalities.add(name)
        self._add(name, terms, const, False)
        self._add(name, {v: -as_fraction(c) for v, c in terms.items()}, -as_fraction(const), False)

    def between(self, name: str, terms, lo: Number, hi: Number, *, strict: bool = False):
        """``lo <= terms <= hi`` (or strictly)."""
        terms = dict(terms)
        self._add(f"{name}>={lo}" if not strict else f"{name}>{lo}", terms, -as_fraction(lo), strict)
        self._add(
            f"{name}<={hi}" if not strict else f"{name}<{hi}",
            {v: -as_fraction(c) for v, c in terms.items()},
            as_fraction(hi),
            strict,
        )

    def copy(self) -> "System":
        out = System(self.variables)
        out.constraints = list(self.constraints)
        out.equalities = set(self.equalities)
        return out


def _normalise(c: Constraint) -> Constraint:
    """Scale so the largest absolute coefficient is one (keeps duplicates detectable)."""
    if not c.coeffs:
        return c
    m = max(abs(x) for x in c.coeffs.values())
    return c.scaled(1 / m)


def _prune(cons: Iterable[Constraint]) -> list[Constraint]:
    """Drop trivially true constraints and keep the tightest of parallel ones."""
    best: dict[tuple, Constraint] = {}
    out = []
    for c in cons:
        if not c.coeffs:
            out.append(c)
            continue
        c = _normalise(c)
        k = c.key()
        old = best.get(k)
        if old is None or c.const < old.const or (c.const == old.const and c.strict and not old.strict):
            best[k] = c
    return out + list(best.values())


def _eliminate(cons: list[Constraint], var: str) -> list[Constraint]:
    pos, neg, rest = [], [], []
    for c in cons:
        a = c.coeffs.get(var, 0)
        (pos if a > 0 else neg if a < 0 else rest).append(c)
    out = list(rest)
    for p in pos:
        for n in neg:
            a, b = p.coeffs[var], -n.coeffs[var]
            coeffs: dict[str, Fraction] = {}
            for v in set(p.coeffs) | set(n.coeffs):
                if v == var:
                    continue
                val = b * p.coeffs.get(v, 0) + a * n.coeffs.get(v, 0)
                if val != 0:
                    coeffs[v] = val
            out.append(
                Constraint(coeffs, b * p.const + a * n.const, p.strict or n.strict, p.sources | n.sources)
            )
    return _prune(out)


def _contradiction(cons: Iterable[Constraint]) -> Constraint | None:
    for c in cons:
        if not c.coeffs and (c.const < 0 or (c.const == 0 and c.strict)):
            return c
    return None


def _choose_value(lows: list[tuple[Fraction, bool]], highs: list[tuple[Fraction, bool]]) -> Fraction:
    lo = max(lows, key=lambda t: (t[0], t[1])) if lows else None
    hi = min(highs, key=lambda t: (t[0], not t[1])) if highs else None
    if lo is not None and hi is not None:
        if lo[0] == hi[0]:
            return lo[0]
        return (lo[0] + hi[0]) / 2
    if lo is not None:
        return lo[0] + 1
    if hi is not None:
        return hi[0] - 1
    return Fraction(0)


def _project(
    constraints: Sequence[Constraint], variables: Sequence[str]
) -> tuple[list[list[Constraint]], list[str], Constraint | None]:
    """Eliminate ``variables`` one at a time, cheapest first.

    Returns the intermediate systems, the elimination order and the first
    contradiction met (``None`` when the projection is consistent).
    """
    stages = [_prune(constraints)]
    order: list[str] = []
    remaining = list(variables)
    while True:
        cur = stages[-1]
        bad = _contradiction(cur)
        if bad is not None or not remaining:
            return stages, order, bad

        def cost(v):
            p = sum(1 for c in cur if c.coeffs.get(v, 0) > 0)
            n = sum(1 for c in cur if c.coeffs.get(v, 0) < 0)
            return (p * n - p - n, v)

        var = min(remaining, key=cost)
        remaining.remove(var)
        order.append(var)
        stages.append(_eliminate(cur, var))


@dataclass
class Solution:
    feasible: bool
    point: dict[str, Fraction] | None
    certificate: Constraint | None


def solve(constraints: Sequence[Constraint], variables: Sequence[str]) -> Solution:
    """Decide feasibility and return a witness or an infeasibility certificate."""
    stages, order, bad = _project(constraints, variables)
    if bad is not None:
        return Solution(False, None, bad)
    point: dict[str, Fraction] = {}
    for depth in range(len(order) - 1, -1, -1):
        var = order[depth]
        lows, highs = [], []
        for c in stages[depth]:
            for v, val in point.items():
                c = c.substitute(v, val)
            a = c.coeffs.get(var, 0)
            if a == 0:
                continue
            bound = -c.const / a
            (lows if a > 0 else highs).append((bound, c.strict))
        point[var] = _choose_value(lows, highs)
    for c in constraints:
        if not c.holds(point):
            raise AssertionError(f"back substitution produced an invalid witness for {c.name}")
    return Solution(True, point, None)


# ---------------------------------------------------------------------------
# hypothesis systems


@dataclass(frozen=True)
class ExponentProblem:
    """One feasibility question: does ``F_rho`` meet ``hypothesis`` at this ``rho``?

    ``cascade_exponent`` is the growth ``5/2`` of the per-scale weight and
    ``band_gain`` the decay ``1/2`` per Sobolev order on a frequency band;
    summability over scales asks for ``band_gain * (total order) >
    cascade_exponent / 2``.
    """

    rho: Fraction
    hypothesis: str = "H1"
    delta: Fraction = Fraction(1, 1000)
    cascade_exponent: Fraction = Fraction(5, 2)
    band_gain: Fraction = Fraction(1, 2)

    def __post_init__(self):
        object.__setattr__(self, "rho", as_fraction(self.rho))
        object.__setattr__(self, "delta", as_fraction(self.delta))
        object.__setattr__(self, "cascade_exponent", as_fraction(self.cascade_exponent))
        object.__setattr__(self, "band_gain", as_fraction(self.band_gain))
        object.__setattr__(self, "hypothesis", canonical_name(self.hypothesis))
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def _summable(s: System, names: Sequence[str], p: ExponentProblem):
    s.gt("summable", {v: p.band_gain for v in names}, -p.cascade_exponent / 2)


def _h1(p: ExponentProblem) -> list[System]:
    # slots ||u||_{H^k1} ||u||_{H^k2} ||phi||_{H^k3} with u in H^{2 rho + 1}, phi in H^1
    s = System(["k1", "k2", "k3", "eta"])
    s.ge("k1>=0", {"k1": 1})
    s.ge("k1<=2rho", {"k1": -1, RHO: 2})
    s.ge("k2>=0", {"k2": 1})
    s.ge("k2<=2rho+1", {"k2": -1, RHO: 2}, 1)
    s.between("k3", {"k3": 1}, 0, 1)
    s.between("eta", {"eta": 1}, 0, 1, strict=True)
    _summable(s, ["k1", "k2", "k3"], p)
    return [s]


def _h2p(p: ExponentProblem) -> list[System]:
    d = p.delta
    s = System(["a", "b", "g"])
    s.between("a-2rho", {"a": 1, RHO: -2}, -d, 1)
    s.between("b-2rho", {"b": 1, RHO: -2}, -d, 1)
    s.between("g", {"g": 1}, -d, 1)
    _summable(s, ["a", "b", "g"], p)
    # H^1 exponent (3 delta + a + b + g - 4 rho)/(1 + delta) must lie in (0, 2)
    s.gt("h1-exponent>0", {"a": 1, "b": 1, "g": 1, RHO: -4}, 3 * d)
    s.gt("h1-exponent<2", {"a": -1, "b": -1, "g": -1, RHO: 4}, 2 * (1 + d) - 3 * d)
    # H^-delta exponent (3 - (a + b + g - 4 rho))/(1 + delta) must be positive
    s.gt("h-delta-exponent>0", {"a": -1, "b": -1, "g": -1, RHO: 4}, 3)
    return [s]


def _h3p(p: ExponentProblem) -> list[System]:
    s = System(["a", "b", "g"])
    s.between("a-2rho", {"a": 1, RHO: -2}, 0, 1)
    s.between("b-2rho", {"b": 1, RHO: -2}, 0, 1)
    s.between("g", {"g": 1}, 0, 1)
    _summable(s, ["a", "b", "g"], p)
    # gamma3 = a + g - 2 rho in (0, 2); kappa = b - 2 rho; beta3 = 2 - gamma3
    s.between("gamma3", {"a": 1, "g": 1, RHO: -2}, 0, 2, strict=True)
    s.ge("gamma3+kappa<=2", {"a": -1, "g": -1, "b": -1, RHO: 4}, 2)
    return [s]


def _h4(p: ExponentProblem) -> list[System]:
    s = System(["k1", "k2"])
    s.ge("k1>=0", {"k1": 1})
    s.ge("k2>=0", {"k2": 1})
    s.ge("k1<=2rho+1", {"k1": -1, RHO: 2}, 1)
    s.ge("k2<=2rho+1", {"k2": -1, RHO: 2}, 1)
    # the mean-zero test pairs against the Bessel potential of order rho
    s.gt(
        "summable",
        {"k1": p.band_gain, "k2": p.band_gain, RHO: -1},
        -p.cascade_exponent / 2,
    )
    return [s]


def _nse(p: ExponentProblem) -> list[System]:
    """Trilinear-estimate system with ``(Id - Delta)^rho`` split between factors.

    A share ``s in [0, rho]`` of the derivatives lands on the test function
    and the rest, through the Leibniz rule, on either of the two velocity
    factors; both resulting terms must close. The share ``s = rho`` is the
    single-term system in which the whole operator falls on the test
    function.
    """
    half3 = Fraction(3, 2)
    base = System(["s", "m1", "m2", "m3", "n1", "n2"])
    base.ge("s>=0", {"s": 1})
    base.ge("s<=rho", {"s": -1, RHO: 1})
    base.eq("m3=1-2s", {"m3": 1, "s": 2}, -1)
    for v in ("m1", "m2", "m3", "n1", "n2"):
        base.ge(f"{v}>=0", {v: 1})
    # first term: extra derivatives on u in the H^{m1} slot
    base.between("m1-2s", {"m1": 1, "s": -2}, 0, 1)
    base.between("m2+1-2rho", {"m2": 1, RHO: -2}, -1, 0)
    base.eq("m1+m2=2rho+2s", {"m1": 1, "m2": 1, RHO: -2, "s": -2})
    base.ge("temam-sum", {"m1": 1, "m2": 1, "m3": 1}, Fraction(-3, 2))
    # second term: extra derivatives on the differentiated factor
    base.between("n1-2rho", {"n1": 1, RHO: -2}, 0, 1)
    base.between("n2+1-2s", {"n2": 1, "s": -2}, -1, 0)
    base.eq("n1+n2=2rho+2s", {"n1": 1, "n2": 1, RHO: -2, "s": -2})
    base.ge("temam-sum'", {"n1": 1, "n2": 1, "m3": 1}, Fraction(-3, 2))
    out = []
    half3 = Fraction(3, 2)
    # m3 = 1 - 2s <= 1 never reaches 3/2, so only the other slots branch
    base.gt("m3<3/2", {"m3": -1}, half3)
    sided = ("m1", "m2", "n1", "n2")
    for signs in itertools.product((-1, 1), repeat=len(sided)):
        s = base.copy()
        for v, sg in zip(sided, signs):
            if sg < 0:
                s.gt(f"{v}<3/2", {v: -1}, half3)
            else:
                s.gt(f"{v}>3/2", {v: 1}, -half3)
        out.append(s)
    return out


_BUILDERS = {"H1": _h1, "H2p": _h2p, "H3p": _h3p, "H4": _h4, "NSE": _nse}

_SENSES = {"H1": "strict", "H2p": "strict", "H3p": "strict", "H4": "strict", "NSE": "non-strict"}


def systems(problem: ExponentProblem) -> list[System]:
    """Alternative constraint systems (the hypothesis holds if any is feasible)."""
    return _BUILDERS[problem.hypothesis](problem)


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class HypothesisVerdict:
    """Outcome of :func:`check`.

    ``witness`` lists exponents meeting every constraint (when passing) and
    ``slack`` the smallest inequality margin there (equalities excluded). ``violated`` names the
    constraints whose combination is contradictory, with the value of that
    combination (negative, or zero for a strict combination).
    """

    hypothesis: str
    rho: Fraction
    passed: bool
    witness: dict[str, Fraction] | None = None
    slack: Fraction | None = None
    violated: list[tuple[str, Fraction]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        out = {"hypothesis": self.hypothesis, "rho": str(self.rho), "rho_float": float(self.rho), "pass": self.passed}
        if self.witness is not None:
            out["witness"] = {k: str(v) for k, v in sorted(self.witness.items())}
            out["slack"] = str(self.slack)
        if self.violated:
            out["violated"] = [{"constraint": n, "margin": str(m)} for n, m in self.violated]
        return out


def check(problem: ExponentProblem) -> HypothesisVerdict:
    """Decide whether some exponent choice satisfies the hypothesis at ``problem.rho``."""
    failures = []
    for sysm in systems(problem):
        cons = [c.substitute(RHO, problem.rho) for c in sysm.constraints]
        sol = solve(cons, sysm.variables)
        if sol.feasible:
            margins = [c.value(sol.point) for c in cons if not (c.sources & sysm.equalities)]
            slack = min(margins)
            return HypothesisVerdict(problem.hypothesis, problem.rho, True, sol.point, slack)
        failures.append(sol.certificate)
    # report the certificate involving the fewest original constraints
    cert = min(failures, key=lambda c: (len(c.sources), c.name))
    violated = [(name, cert.const) for name in sorted(cert.sources)]
    return HypothesisVerdict(problem.hypothesis, problem.rho, False, violated=violated)


def check_nse(rho: Number) -> HypothesisVerdict:
    return check(ExponentProblem(rho=as_fraction(rho), hypothesis="NSE"))


def check_at(hypothesis: str, rho: Number, delta: Number = Fraction(1, 1000)) -> HypothesisVerdict:
    return check(ExponentProblem(rho=as_fraction(rho), hypothesis=hypothesis, delta=as_fraction(delta)))


@dataclass(frozen=True)
class Boundary:
    """Closed-form threshold: the hypothesis holds for ``rho > value`` (strict) or ``rho >= value``."""

    value: Fraction
    strict: bool

    def admits(self, rho: Fraction) -> bool:
        return rho > self.value if self.strict else rho >= self.value


@dataclass(frozen=True)
class Interval:
    """Range of ``rho`` admitted by one alternative system; ``hi=None`` is unbounded."""

    lo: Fraction
    lo_strict: bool
    hi: Fraction | None
    hi_strict: bool

    def contains(self, rho: Fraction) -> bool:
        ok_lo = rho > self.lo if self.lo_strict else rho >= self.lo
        if self.hi is None:
            return ok_lo
        return ok_lo and (rho < self.hi if self.hi_strict else rho <= self.hi)


def admissible_intervals(hypothesis: str, delta: Number = Fraction(1, 1000)) -> list[Interval]:
    """Eliminate every exponent, leaving the exact admissible ``rho`` per alternative system."""
    problem = ExponentProblem(rho=Fraction(0), hypothesis=hypothesis, delta=as_fraction(delta))
    out = []
    for sysm in systems(problem):
        stages, _, bad = _project(sysm.constraints, sysm.variables)
        if bad is not None:
            continue
        cons = list(stages[-1])
        cons.append(Constraint({RHO: Fraction(1)}, Fraction(0), False, frozenset(["rho>=0"])))
        if _contradiction(cons) is not None:
            continue
        lo, lo_strict, hi, hi_strict = Fraction(0), False, None, False
        for c in cons:
            a = c.coeffs.get(RHO, 0)
            if a == 0:
                continue
            b = -c.const / a
            if a > 0 and (b > lo or (b == lo and c.strict)):
                lo, lo_strict = b, c.strict
            elif a < 0 and (hi is None or b < hi or (b == hi and c.strict)):
                hi, hi_strict = b, c.strict
        iv = Interval(lo, lo_strict, hi, hi_strict)
        if hi is not None and (hi < lo or (hi == lo and (lo_strict or hi_strict))):
            continue
        out.append(iv)
    return sorted(out, key=lambda iv: (iv.lo, iv.lo_strict))


def boundary(hypothesis: str, delta: Number = Fraction(1, 1000)) -> Boundary:
    """Closed-form threshold: the left end of the union of admissible intervals."""
    ivs = admissible_intervals(hypothesis, delta)
    if not ivs:
        raise ValueError(f"{hypothesis} is infeasible for every rho")
    first = ivs[0]
    return Boundary(first.lo, first.lo_strict)


def threshold(
    hypothesis: str,
    tol: float = 1e-9,
    *,
    delta: Number = Fraction(1, 1000),
    bracket: tuple[Number, Number] = (0, 1),
    grid: int = 41,
) -> float:
    """Smallest passing ``rho`` in the bracket, by bisection to ``tol``.

    Monotonicity is asserted on ``grid`` equally spaced points of the
    bracket first; a fail after a pass raises :class:`NonMonotone`.
    """
    lo, hi = as_fraction(bracket[0]), as_fraction(bracket[1])
    if hi <= lo:
        raise ValueError("empty bracket")
    pts = [lo + (hi - lo) * j / (grid - 1) for j in range(grid)]
    verdicts = [check_at(hypothesis, r, delta).passed for r in pts]
    for j in range(1, grid):
        if verdicts[j - 1] and not verdicts[j]:
            raise NonMonotone(f"{hypothesis} passes at rho={pts[j - 1]} but fails at rho={pts[j]}")
    if not verdicts[-1]:
        raise NonMonotone(f"{hypothesis} fails at the top of the bracket rho={hi}")
    if verdicts[0]:
        return float(lo)
    j = verdicts.index(True)
    lo, hi = pts[j - 1], pts[j]
    tol_f = as_fraction(tol)
    while hi - lo > tol_f:
        mid = (lo + hi) / 2
        if check_at(hypothesis, mid, delta).passed:
            hi = mid
        else:
            lo = mid
    return float(hi)


def grid_verdicts(hypothesis: str, rhos: Iterable[Number], delta: Number = Fraction(1, 1000)) -> list[HypothesisVerdict]:
    return [check_at(hypothesis, r, delta) for r in rhos]


def parse_rho_range(text: str) -> list[Fraction]:
    """``"0.2"`` or ``"a..b:step"`` into exact rationals (endpoints included)."""
    if ".." not in text:
        return [as_fraction(text)]
    span, _, step = text.partition(":")
    a, _, b = span.partition("..")
    a, b = as_fraction(a), as_fraction(b)
    step = as_fraction(step or "0.01")
    if step <= 0:
        raise ValueError("step must be positive")
    out = []
    x = a
    while x <= b:
        out.append(x)
        x += step
    return out
