"""Acceptance suite: each criterion as a function returning a :class:`CriterionResult`.

Every criterion records its numerical evidence in ``metrics``. The suite
hash is the SHA-256 of the canonical JSON of all metrics and verdicts
(wall-clock times excluded), so two runs with the same master seed must
produce the same hash.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import cascade, hypotheses, noise, shell, spde
from .torus import (
    BallFamily,
    gram_matrix,
    lattice,
    random_divergence_free,
    wavelet_family,
)

SUITES = ("fast", "full")

# Relative error of the scaling limit at N = 32 from the brute-force
# nested-summation corrector, computed once and frozen.
FROZEN_LIMIT_ERROR_N32 = 1.0615555735248219e-4


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict
    seconds: float = 0.0
    budget: float | None = None
    note: str = ""

    def __post_init__(self) -> None:
        self.passed = bool(self.passed)
        self.metrics = _clean(self.metrics)

    @property
    def within_budget(self) -> bool:
        return bool(self.budget is None or self.seconds <= self.budget)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return f"{verdict} criterion {self.number}: {self.name} [{self.seconds:.1f}s]{extra}"

    def to_json_dict(self, *, timing: bool = True) -> dict:
        out = {"criterion": self.number, "name": self.name, "pass": self.passed, "metrics": self.metrics}
        if self.note:
            out["note"] = self.note
        if timing:
            out["seconds"] = round(self.seconds, 3)
            out["budget_seconds"] = self.budget
            out["within_budget"] = self.within_budget
        return out


def criterion_seed(master_seed: int, number: int) -> int:
    """Independent 63-bit seed for one criterion."""
    return int(np.random.SeedSequence([int(master_seed), int(number)]).generate_state(1, np.uint64)[0] >> 1)


def _clean(x):
    """Plain JSON values with floats kept at full precision."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


# ---------------------------------------------------------------------------
# criteria


def c1_cancellation(suite: str, master_seed: int) -> CriterionResult:
    cfg = cascade.default_config(m=3, n_min=0, n_top=3)
    rng = np.random.default_rng(criterion_seed(master_seed, 1))
    worst_cancel = 0.0
    worst_sym = 0.0
    for _ in range(100):
        u = cascade.random_span_field(cfg, rng)
        v = cascade.random_span_field(cfg, rng)
        c_uu = cascade.apply(cfg, u, u)
        nu = u.norm()
        worst_cancel = max(worst_cancel, abs(c_uu.inner(u)) / cascade.cancellation_tolerance(cfg, nu))
        c_uv = cascade.apply(cfg, u, v)
        c_vu = cascade.apply(cfg, v, u)
        worst_sym = max(worst_sym, (c_uv - c_vu).norm() / max(c_uv.norm(), 1e-300))
    ok = worst_cancel <= 1.0 and worst_sym <= 1e-12
    return CriterionResult(
        1,
        "cancellation and symmetry of the cascade operator",
        ok,
        {"max_cancellation_over_tolerance": worst_cancel, "max_symmetry_relative": worst_sym},
        budget=10.0,
    )


def c2_wavelets(suite: str, master_seed: int) -> CriterionResult:
    fam = BallFamily.default(3, 0.95)
    wl = wavelet_family(fam, 0, 3)
    ws = [wl[k] for k in sorted(wl)]
    g = gram_matrix(ws)
    gram_err = float(np.max(np.abs(g - np.eye(len(ws)))))
    support_ok = True
    mean_max = 0.0
    for (i, n), w in sorted(wl.items()):
        ks = lattice(3, w.field.cutoff).reshape(-1, 3).astype(float)
        scale = (1.0 + fam.eps0) ** n
        c = scale * np.asarray(fam.centers[i - 1], dtype=float)
        r = scale * float(fam.radii[i - 1])
        inside = (np.linalg.norm(ks - c, axis=1) < r) | (np.linalg.norm(ks + c, axis=1) < r)
        expected = {tuple(int(x) for x in k) for k in ks[inside]}
        support_ok = support_ok and w.field.support() == expected
        mean_max = max(mean_max, float(np.max(np.abs(w.field[(0, 0, 0)]))))
    ok = gram_err <= 1e-12 and support_ok and mean_max == 0.0
    return CriterionResult(
        2,
        "wavelet orthonormality, support and zero mean",
        ok,
        {"gram_max_error": gram_err, "support_exact": support_ok, "max_mean_value": mean_max, "wavelets": len(ws)},
        budget=5.0,
    )


def c3_corrector_identity(suite: str, master_seed: int) -> CriterionResult:
    rng = np.random.default_rng(criterion_seed(master_seed, 3))
    basis = noise.NoiseBasis(3)
    nu = 1.0
    worst_literal = 0.0
    worst_single = 0.0
    fields = [random_divergence_free(rng, 3, 3, radius=3.0) for _ in range(20)]
    for N in (1, 2, 4):
        for lam in (0.0, 1.0):
            theta = noise.theta_shell(N, lam, 3)
            for u in fields:
                lhs = u.inner(noise.corrector_apply(theta, basis, nu, u))
                rhs = -noise.transport_energy(theta, basis, nu, u)
                worst_literal = max(worst_literal, abs(2.0 * lhs - rhs) / abs(rhs))
                worst_single = max(worst_single, abs(lhs - rhs) / abs(rhs))
    ok = worst_literal <= 1e-10
    return CriterionResult(
        3,
        "corrector energy identity 2<u,S u> = -(C_d nu/|theta|^2) sum theta^2 |Pi(sigma.grad)u|^2",
        ok,
        {
            "max_relative_error_as_stated": worst_literal,
            "max_relative_error_without_factor_2": worst_single,
        },
        budget=30.0,
        note="" if ok else "the identity holds without the factor 2; see the decisions ledger",
    )


def c4_scaling_limit(suite: str, master_seed: int) -> CriterionResult:
    phi = noise.single_mode((1, 0, 0))
    Ns = (4, 8, 16, 32)
    errs = [noise.corrector_limit_error(N, 1.0, 1.0, phi, relative=True) for N in Ns]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ratio = errs[-1] / FROZEN_LIMIT_ERROR_N32
    ok = decreasing and errs[-1] < 0.1 and 0.8 <= ratio <= 1.2
    return CriterionResult(
        4,
        "corrector converges to (3 nu/5) Laplacian",
        ok,
        {"N": list(Ns), "relative_error": errs, "strictly_decreasing": decreasing, "ratio_to_frozen_oracle": ratio},
        budget=600.0,
    )


def mean_field_setup(master_seed: int, M: int):
    theta = noise.theta_shell(1, 1.0, 3)
    cfg = spde.SpdeConfig(alpha=1.0, nu=1.0, theta=theta, dt=1e-3, T=0.1, state_cutoff=4, galerkin_N=4.0)
    rng = np.random.default_rng(criterion_seed(master_seed, 5))
    u0 = random_divergence_free(rng, 3, 4, radius=1.5)
    return cfg, u0


def c5_mean_field(suite: str, master_seed: int) -> CriterionResult:
    M = 10_000 if suite == "full" else 2_000
    cfg, u0 = mean_field_setup(master_seed, M)
    res = spde.ensemble_mean_field(cfg, u0, M, master_seed, sample_every=10)
    refs = spde.semigroup_matrix_reference(cfg, u0, res.times)
    chk = spde.compare_mean_field(res, refs, u0)
    # t = 0 is deterministic; the ten sampled times follow it
    z = chk.projection_z[1:]
    r = chk.distance_ratio[1:]
    ok = bool(np.all(z <= 3.0) and np.all(r <= 3.0)) and len(z) == 10
    return CriterionResult(
        5,
        "ensemble mean matches the (-Lambda^2 + S_theta) semigroup",
        ok,
        {
            "M": M,
            "times": res.times[1:],
            "projection_z": z,
            "distance_over_stderr": r,
            "mean_norm_T": float(np.sqrt(np.sum(np.abs(res.mean[-1]) ** 2))),
        },
        budget=1800.0,
        note="" if suite == "full" else "fast suite uses M=2000",
    )


# index pairs ((k, i), (l, j)) on the theta_shell(1, 1) support
_COV_PAIRS = [
    (((1, 0, 0), 1), ((-1, 0, 0), 1)),
    (((0, 1, 0), 2), ((0, -1, 0), 2)),
    (((1, 1, 0), 1), ((-1, -1, 0), 1)),
    (((-1, 1, 1), 2), ((1, -1, -1), 2)),
    (((0, 0, 2), 1), ((0, 0, -2), 1)),
    (((1, 0, 0), 1), ((1, 0, 0), 1)),
    (((1, 0, 0), 1), ((-1, 0, 0), 2)),
    (((0, 1, 1), 1), ((0, -1, -1), 2)),
    (((1, 0, 0), 1), ((0, 1, 0), 1)),
    (((2, 0, 0), 2), ((-1, 1, 0), 2)),
]


def c6_brownian(suite: str, master_seed: int) -> CriterionResult:
    theta = noise.theta_shell(1, 1.0, 3)
    driver = noise.BrownianDriver(theta, criterion_seed(master_seed, 6))
    dt = 1e-2
    n = 100_000
    kpos = [tuple(int(x) for x in k) for k in driver.kpos]
    index = {k: j for j, k in enumerate(kpos)}
    draws = np.empty((n,) + driver.shape, dtype=np.complex128)
    for t in range(n):
        draws[t] = driver.step(dt)

    def series(k, i):
        if k in index:
            return draws[:, index[k], i - 1]
        return np.conj(draws[:, index[tuple(-x for x in k)], i - 1])

    worst = 0.0
    rows = []
    for (k, i), (l, j) in _COV_PAIRS:
        prod = series(k, i) * series(l, j)
        expect = 2.0 * dt if (all(a + b == 0 for a, b in zip(k, l)) and i == j) else 0.0
        mre, mim = float(prod.real.mean()), float(prod.imag.mean())
        se_re = float(prod.real.std(ddof=1) / math.sqrt(n))
        se_im = float(prod.imag.std(ddof=1) / math.sqrt(n))
        z_re = abs(mre - expect) / se_re
        z_im = abs(mim) / se_im if se_im > 0 else (0.0 if mim == 0 else math.inf)
        worst = max(worst, z_re, z_im)
        rows.append({"pair": [list(k), i, list(l), j], "expected": expect, "mean_re": mre, "mean_im": mim, "z_re": z_re, "z_im": z_im})
    return CriterionResult(
        6,
        "Brownian covariance 2 t delta_{k+l} delta_{ij}",
        worst <= 4.0,
        {"max_z": worst, "pairs": rows, "increments": n, "dt": dt},
        budget=10.0,
    )


def c7_hypotheses(suite: str, master_seed: int) -> CriterionResult:
    chk = hypotheses.check_at
    delta = Fraction(1, 1000)
    verdicts = {}
    for h in ("H1", "H2p", "H3p"):
        verdicts[h] = (chk(h, "0.125", delta).passed, chk(h, "0.13", delta).passed)
    verdicts["H4"] = (chk("H4", "0.25").passed, chk("H4", "0.26").passed)
    nse = chk("NSE", "0.25").passed
    thresholds = {h: hypotheses.threshold(h, 1e-7) for h in ("H1", "H4", "NSE")}
    targets = {"H1": 0.125, "H4": 0.25, "NSE": 0.25}
    ok = all(v == (False, True) for v in verdicts.values()) and nse
    ok = ok and all(abs(thresholds[h] - targets[h]) <= 1e-6 for h in targets)
    return CriterionResult(
        7,
        "hypothesis thresholds",
        ok,
        {
            "fail_pass": {h: list(v) for h, v in verdicts.items()},
            "nse_pass_at_quarter": nse,
            "bisection_thresholds": thresholds,
            "exact_boundaries": {h: str(hypotheses.boundary(h).value) for h in hypotheses.HYPOTHESES},
        },
        budget=5.0,
    )


def c8_shell(suite: str, master_seed: int) -> CriterionResult:
    small = shell.ShellState.single_shell(0, 8, 2, 0.01, lam=2.0, diss_exp=1.0, nu_d=1.0)
    tr_d = shell.integrate(small, T=10.0, dt=1e-3, proxy_threshold=None)
    norms = np.sqrt(np.sum(tr_d.u**2, axis=1))
    monotone = bool(np.all(np.diff(norms) < 0))
    big = shell.ShellState.single_shell(0, 30, 0, 1.0, lam=2.0, diss_exp=0.0, nu_d=0.0)
    p0 = shell.sobolev_proxy(big, 2.1)
    tr_b = shell.integrate(big, T=10.0, dt=1e-4, proxy_threshold=1e6 * p0)
    growth = float(tr_b.proxy[-1] / tr_b.proxy[0])
    e_err = float(np.max(np.abs(tr_b.energy - tr_b.energy[0])) / tr_b.energy[0])
    ok = monotone and tr_d.decay and growth >= 1e6 and float(tr_b.times[-1]) < 10.0 and e_err <= 1e-6
    return CriterionResult(
        8,
        "shell-model dichotomy",
        ok,
        {
            "decay_monotone": monotone,
            "decay_flag": tr_d.decay,
            "decay_final_ratio": float(norms[-1] / norms[0]),
            "growth": growth,
            "growth_time": float(tr_b.times[-1]),
            "energy_relative_error": e_err,
        },
        budget=60.0,
    )


def energy_equality_setup():
    casc = cascade.default_config(m=1, n_min=0, n_top=2)
    x = np.zeros((casc.family.m, casc.nscales))
    x[0, 1] = 100.0
    u0 = cascade.synthesize(casc, x)
    cfg = spde.SpdeConfig(alpha=1.0, nu=0.0, cascade=casc, dt=1e-4, T=0.1)
    return cfg, u0


def c9_energy_equality(suite: str, master_seed: int) -> CriterionResult:
    cfg, u0 = energy_equality_setup()
    rec = spde.run_deterministic_limit(cfg, u0, record_every=100)
    e0 = u0.norm() ** 2
    bal = abs(rec.l2[-1] ** 2 + rec.dissipation_integral[-1] - e0) / e0
    lin = spde.run_deterministic_limit(cfg.with_(nonlinear_scale=0.0), u0, record_every=100)
    shift = np.abs(np.asarray(rec.E) - np.asarray(lin.E)).reshape(len(rec.times), -1).sum(axis=1)
    transfer = float(np.max(shift) / e0)
    return CriterionResult(
        9,
        "energy equality for the deterministic cascade equation",
        bal <= 1e-6,
        {"relative_imbalance": bal, "max_nonlinear_band_energy_shift_over_e0": transfer},
        budget=120.0,
    )


CRITERIA: dict[int, Callable[[str, int], CriterionResult]] = {
    1: c1_cancellation,
    2: c2_wavelets,
    3: c3_corrector_identity,
    4: c4_scaling_limit,
    5: c5_mean_field,
    6: c6_brownian,
    7: c7_hypotheses,
    8: c8_shell,
    9: c9_energy_equality,
}


def run_criterion(number: int, suite: str = "full", master_seed: int = 0) -> CriterionResult:
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}")
    start = time.perf_counter()
    res = CRITERIA[number](suite, master_seed)
    res.seconds = time.perf_counter() - start
    res.metrics = _clean(res.metrics)
    return res


def results_hash(results: list[CriterionResult]) -> str:
    doc = [r.to_json_dict(timing=False) for r in sorted(results, key=lambda r: r.number)]
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SuiteSummary:
    suite: str
    master_seed: int
    results: list[CriterionResult]
    hash: str
    rerun_hash: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json_dict(self) -> dict:
        return {
            "suite": self.suite,
            "master_seed": self.master_seed,
            "hash": self.hash,
            "rerun_hash": self.rerun_hash,
            "pass": self.passed,
            "criteria": [r.to_json_dict() for r in self.results],
        }


def determinism_result(first: str, second: str, seconds: float) -> CriterionResult:
    return CriterionResult(
        10,
        "identical hashes for two runs with the same master seed",
        first == second,
        {"first": first, "second": second},
        seconds=seconds,
    )


def run_suite(
    suite: str = "fast",
    master_seed: int = 0,
    *,
    only: list[int] | None = None,
    determinism: bool = True,
    echo: Callable[[str], None] | None = None,
) -> SuiteSummary:
    """Run criteria 1-9 and, with ``determinism``, run them again for criterion 10."""
    numbers = sorted(only) if only else sorted(CRITERIA)
    results = []
    for n in numbers:
        if n == 10:
            continue
        r = run_criterion(n, suite, master_seed)
        results.append(r)
        if echo:
            echo(r.line())
    first = results_hash(results)
    rerun = None
    if determinism and (only is None or 10 in only):
        start = time.perf_counter()
        again = [run_criterion(r.number, suite, master_seed) for r in results]
        rerun = results_hash(again)
        det = determinism_result(first, rerun, time.perf_counter() - start)
        results.append(det)
        if echo:
            echo(det.line())
    return SuiteSummary(suite, master_seed, results, first, rerun)
