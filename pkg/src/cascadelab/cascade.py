"""Local cascade operator built from structure constants and wavelets.

The operator couples wavelet coefficients at neighbouring scales,

    C(u, v) = sum_n sum_{i, mu} alpha_{i1 i2 i3 mu} lambda^(5n/2)
              <u, psi_{i1, n+mu1}> <v, psi_{i2, n+mu2}> psi_{i3, n+mu3},

with ``mu`` ranging over ``(0,0,0), (1,0,0), (0,1,0), (0,0,1)``. Only the
scales ``n_min..n_top`` are stored; wavelets outside that window are treated
as absent, which keeps the cancellation property exact.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .torus import (
    FOUR_PI_SQ,
    BallFamily,
    BumpProfile,
    CutoffTooSmall,
    PeriodizedWavelet,
    SpectralField,
    required_cutoff,
    wavelet_family,
)

SHIFTS: tuple[tuple[int, int, int], ...] = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))

_PERMUTATIONS = list(itertools.permutations(range(3)))

Key = tuple[int, int, int, int, int, int]


class ScaleOverflow(RuntimeError):
    """Raised in strict mode when a coupling reaches beyond the top scale."""


@dataclass(frozen=True)
class StructureConstants:
    """Coefficients ``alpha[(i1, i2, i3, mu1, mu2, mu3)]`` with balls numbered from 1."""

    m: int
    entries: Mapping[Key, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for key, val in dict(self.entries).items():
            key = tuple(int(x) for x in key)
            if len(key) != 6:
                raise ValueError(f"malformed key {key}")
            i, mu = key[:3], key[3:]
            if any(not 1 <= x <= self.m for x in i):
                raise ValueError(f"ball index out of range in {key}")
            if mu not in SHIFTS:
                raise ValueError(f"shift {mu} not in {SHIFTS}")
            if val != 0.0:
                clean[key] = float(val)
        object.__setattr__(self, "entries", clean)

    def __getitem__(self, key: Key) -> float:
        return self.entries.get(tuple(key), 0.0)

    @property
    def bound(self) -> float:
        return max((abs(v) for v in self.entries.values()), default=0.0)

    def to_json_list(self) -> list[dict]:
        return [
            {"i": list(k[:3]), "mu": list(k[3:]), "alpha": v} for k, v in sorted(self.entries.items())
        ]

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "entries": self.to_json_list()})

    @classmethod
    def from_json_list(cls, m: int, items: list[Mapping]) -> "StructureConstants":
        return cls(m, {tuple(d["i"]) + tuple(d["mu"]): float(d["alpha"]) for d in items})

    @classmethod
    def from_json(cls, text: str) -> "StructureConstants":
        doc = json.loads(text)
        return cls.from_json_list(int(doc["m"]), doc["entries"])


@dataclass(frozen=True)
class Violation:
    kind: str
    key: Key
    residual: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _permute(key: Key, perm: tuple[int, int, int]) -> Key:
    i, mu = key[:3], key[3:]
    return tuple(i[p] for p in perm) + tuple(mu[p] for p in perm)


def validate(constants: StructureConstants, tol: float = 0.0) -> ValidationReport:
    """List every violated symmetry and cancellation identity.

    Symmetry asks ``alpha(i1,i2,i3,mu1,mu2,mu3) = alpha(i2,i1,i3,mu2,mu1,mu3)``;
    cancellation asks the sum over all six joint permutations of the index
    and shift triples to vanish. Each orbit is reported once.
    """
    found = []
    seen_sym = set()
    seen_orbit = set()
    rng = range(1, constants.m + 1)
    for i in itertools.product(rng, rng, rng):
        for mu in SHIFTS:
            key = i + mu
            swap = _permute(key, (1, 0, 2))
            pair = min(key, swap)
            if pair not in seen_sym:
                seen_sym.add(pair)
                res = constants[key] - constants[swap]
                if abs(res) > tol:
                    found.append(Violation("symmetry", pair, res))
            orbit = min(_permute(key, p) for p in _PERMUTATIONS)
            if orbit not in seen_orbit:
                seen_orbit.add(orbit)
                res = sum(constants[_permute(orbit, p)] for p in _PERMUTATIONS)
                if abs(res) > tol:
                    found.append(Violation("cancellation", orbit, res))
    return ValidationReport(tuple(found))


def dyadic_default(m: int = 1) -> StructureConstants:
    """Illustrative constants producing the dyadic cascade on each ball.

    For every ball ``i`` the entries ``alpha(i,i,i,0,0,1) = 1`` and
    ``alpha(i,i,i,1,0,0) = alpha(i,i,i,0,1,0) = -1/2`` induce
    ``dX_n/dt = lambda^(5(n-1)/2) X_(n-1)^2 - lambda^(5n/2) X_n X_(n+1)``.
    """
    if m < 1:
        raise ValueError("need at least one ball")
    entries = {}
    for i in range(1, m + 1):
        entries[(i, i, i, 0, 0, 1)] = 1.0
        entries[(i, i, i, 1, 0, 0)] = -0.5
        entries[(i, i, i, 0, 1, 0)] = -0.5
    return StructureConstants(m, entries)


@dataclass(frozen=True)
class CascadeReport:
    """Diagnostics from one evaluation: flux sent past the top scale."""

    truncated_norm: float
    truncated_terms: int


@dataclass(frozen=True, eq=False)
class CascadeConfig:
    """Structure constants plus the wavelet family on a fixed scale window.

    Use :meth:`build` to construct. Wavelet ``(i, n)`` occupies slot
    ``(i - 1) * nscales + (n - n_min)`` in all per-wavelet arrays.
    """

    constants: StructureConstants
    family: BallFamily
    n_min: int
    n_top: int
    cutoff: int
    rho: float
    wavelets: Mapping[tuple[int, int], PeriodizedWavelet]
    # precomputed gather/scatter data
    flat_idx: np.ndarray
    vecs: np.ndarray
    owner: np.ndarray
    starts: np.ndarray
    weight_rho: np.ndarray
    terms: np.ndarray
    term_coef: np.ndarray
    lost: np.ndarray
    lost_coef: np.ndarray

    @classmethod
    def build(
        cls,
        constants: StructureConstants,
        family: BallFamily,
        n_min: int,
        n_top: int,
        cutoff: int | None = None,
        rho: float = 0.0,
        profile: BumpProfile | None = None,
    ) -> "CascadeConfig":
        if constants.m != family.m:
            raise ValueError(f"constants use {constants.m} balls but the family has {family.m}")
        if n_top < n_min:
            raise ValueError("empty scale window")
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        need = required_cutoff(family, n_top)
        if cutoff is None:
            cutoff = need
        if cutoff < need:
            raise CutoffTooSmall(f"cutoff {cutoff} below required {need} for n_top={n_top}")
        wl = wavelet_family(family, n_min, n_top, cutoff, profile)
        nsc = n_top - n_min + 1
        order = [(i, n) for i in range(1, family.m + 1) for n in range(n_min, n_top + 1)]
        idx, vecs, owner, starts, wrho = [], [], [], [], []
        pos = 0
        for slot, key in enumerate(order):
            w = wl[key]
            starts.append(pos)
            k = w.points
            width = 2 * cutoff + 1
            flat = ((k[:, 0] + cutoff) * width + (k[:, 1] + cutoff)) * width + (k[:, 2] + cutoff)
            idx.append(flat)
            vecs.append(w.vectors)
            owner.append(np.full(len(k), slot))
            wrho.append((1.0 + FOUR_PI_SQ * np.sum(k.astype(float) ** 2, axis=1)) ** rho)
            pos += len(k)

        def slot(i, n):
            return (i - 1) * nsc + (n - n_min)

        lam = family.scale
        terms, coef, lost, lost_coef = [], [], [], []
        for key, a in constants.entries.items():
            i, mu = key[:3], key[3:]
            for n in range(n_min - 1, n_top + 1):
                ns = [n + x for x in mu]
                weight = a * lam ** (2.5 * n)
                if not (n_min <= ns[0] <= n_top and n_min <= ns[1] <= n_top):
                    continue
                if n_min <= ns[2] <= n_top:
                    terms.append((slot(i[0], ns[0]), slot(i[1], ns[1]), slot(i[2], ns[2])))
                    coef.append(weight)
                else:
                    lost.append((slot(i[0], ns[0]), slot(i[1], ns[1]), i[2], ns[2]))
                    lost_coef.append(weight)

        def arr(x, dtype, width):
            out = np.array(x, dtype=dtype).reshape(-1, width) if width else np.array(x, dtype=dtype)
            out.setflags(write=False)
            return out

        return cls(
            constants=constants,
            family=family,
            n_min=n_min,
            n_top=n_top,
            cutoff=cutoff,
            rho=float(rho),
            wavelets=wl,
            flat_idx=arr(np.concatenate(idx), np.int64, 0),
            vecs=arr(np.concatenate(vecs), float, 3),
            owner=arr(np.concatenate(owner), np.int64, 0),
            starts=arr(starts, np.int64, 0),
            weight_rho=arr(np.concatenate(wrho), float, 0),
            terms=arr(terms, np.int64, 3),
            term_coef=arr(coef, float, 0),
            lost=arr(lost, np.int64, 4),
            lost_coef=arr(lost_coef, float, 0),
        )

    @property
    def nscales(self) -> int:
        return self.n_top - self.n_min + 1

    @property
    def nslots(self) -> int:
        return self.family.m * self.nscales

    def slot(self, i: int, n: int) -> int:
        return (i - 1) * self.nscales + (n - self.n_min)

    def scale_factor(self, n: int) -> float:
        """The weight ``(1 + eps0)^(5n/2)``."""
        return self.family.scale ** (2.5 * n)

    def wavelet(self, i: int, n: int) -> PeriodizedWavelet:
        return self.wavelets[(i, n)]

    def with_rho(self, rho: float) -> "CascadeConfig":
        return CascadeConfig.build(
            self.constants, self.family, self.n_min, self.n_top, self.cutoff, rho
        )

    # --- array kernels operating on flattened coefficient batches --------
    def coefficients_flat(self, flat: np.ndarray, *, from_v: bool = False) -> np.ndarray:
        """Wavelet coefficients ``X`` for flattened fields.

        ``flat`` has shape ``(B, modes, 3)``; the result has shape
        ``(B, nslots)``. With ``from_v`` the input is ``v = (Id - Delta)^rho u``
        and ``u`` is recovered per mode before pairing.
        """
        vals = flat[:, self.flat_idx, :].real
        vecs = self.vecs / self.weight_rho[:, None] if from_v else self.vecs
        contrib = np.einsum("bpc,pc->bp", vals, vecs)
        return np.add.reduceat(contrib, self.starts, axis=1)

    def combine(self, xu: np.ndarray, xv: np.ndarray) -> np.ndarray:
        """Output wavelet amplitudes ``Y`` from input coefficients, shape ``(B, nslots)``."""
        out = np.zeros_like(xu)
        if len(self.term_coef):
            prod = self.term_coef * xu[:, self.terms[:, 0]] * xv[:, self.terms[:, 1]]
            for target in np.unique(self.terms[:, 2]):
                out[:, target] = prod[:, self.terms[:, 2] == target].sum(axis=1)
        return out

    def truncated_amplitudes(self, xu: np.ndarray, xv: np.ndarray) -> np.ndarray:
        if not len(self.lost_coef):
            return np.zeros((xu.shape[0], 0))
        return self.lost_coef * xu[:, self.lost[:, 0]] * xv[:, self.lost[:, 1]]

    def synthesize_flat(self, y: np.ndarray, nmodes: int, *, to_v: bool = False) -> np.ndarray:
        """Field coefficients ``sum_slot y[slot] psi_slot``, shape ``(B, modes, 3)``."""
        out = np.zeros((y.shape[0], nmodes, 3), dtype=np.complex128)
        vecs = self.vecs * self.weight_rho[:, None] if to_v else self.vecs
        out[:, self.flat_idx, :] = y[:, self.owner, None] * vecs
        return out

    def _check(self, u: SpectralField):
        if u.dim != 3 or u.cutoff != self.cutoff:
            raise ValueError(
                f"field on (dim={u.dim}, cutoff={u.cutoff}) incompatible with cutoff {self.cutoff}"
            )


def coefficients(cfg: CascadeConfig, u: SpectralField) -> np.ndarray:
    """``X[i-1, n-n_min] = <u, psi_{i,n}>`` for all stored wavelets."""
    cfg._check(u)
    x = cfg.coefficients_flat(u.coeffs.reshape(1, -1, 3))
    return x.reshape(cfg.family.m, cfg.nscales)


def synthesize(cfg: CascadeConfig, x: np.ndarray) -> SpectralField:
    """Field ``sum X[i,n] psi_{i,n}`` from an ``(m, nscales)`` coefficient array."""
    y = np.asarray(x, dtype=float).reshape(1, -1)
    width = 2 * cfg.cutoff + 1
    flat = cfg.synthesize_flat(y, width**3)
    return SpectralField(3, cfg.cutoff, flat.reshape((width,) * 3 + (3,)), mean_zero=True)


def _apply_core(
    cfg: CascadeConfig, u: SpectralField, v: SpectralField, *, rho_mode: bool, strict: bool
) -> tuple[SpectralField, CascadeReport]:
    cfg._check(u)
    cfg._check(v)
    fu = u.coeffs.reshape(1, -1, 3)
    fv = v.coeffs.reshape(1, -1, 3)
    xu = cfg.coefficients_flat(fu, from_v=rho_mode)
    xv = xu if v is u else cfg.coefficients_flat(fv, from_v=rho_mode)
    y = cfg.combine(xu, xv)
    lost = cfg.truncated_amplitudes(xu, xv)
    lost_norm = float(np.sqrt(np.sum(lost**2)))
    nonzero = int(np.count_nonzero(lost))
    if strict and nonzero:
        raise ScaleOverflow(
            f"{nonzero} coupling(s) reach beyond n_top={cfg.n_top}; amplitude {lost_norm:.3e}"
        )
    flat = cfg.synthesize_flat(y, fu.shape[1], to_v=rho_mode)
    out = SpectralField(3, cfg.cutoff, flat.reshape(u.coeffs.shape), mean_zero=True)
    return out, CascadeReport(lost_norm, nonzero)


def apply(
    cfg: CascadeConfig, u: SpectralField, v: SpectralField, *, strict: bool = False
) -> SpectralField:
    """Evaluate ``C(u, v)``."""
    return _apply_core(cfg, u, v, rho_mode=False, strict=strict)[0]


def apply_report(
    cfg: CascadeConfig, u: SpectralField, v: SpectralField, *, strict: bool = False
) -> tuple[SpectralField, CascadeReport]:
    """Evaluate ``C(u, v)`` and report the flux dropped at the top scale."""
    return _apply_core(cfg, u, v, rho_mode=False, strict=strict)


def apply_rho(cfg: CascadeConfig, v: SpectralField, *, strict: bool = False) -> SpectralField:
    """``F_rho(v) = (Id - Delta)^rho C(u, u)`` where ``v = (Id - Delta)^rho u``."""
    return _apply_core(cfg, v, v, rho_mode=True, strict=strict)[0]


def cancellation_tolerance(cfg: CascadeConfig, u_norm: float) -> float:
    """Admissible ``|<C(u,u),u>|`` for the cancellation invariant."""
    total = sum(cfg.scale_factor(n) for n in range(cfg.n_min - 1, cfg.n_top + 1))
    return 1e-10 * u_norm**3 * max(cfg.constants.bound, 1e-300) * total


def random_span_field(cfg: CascadeConfig, rng: np.random.Generator) -> SpectralField:
    """Random element of the wavelet span with Gaussian coefficients."""
    return synthesize(cfg, rng.standard_normal((cfg.family.m, cfg.nscales)))


def default_config(
    m: int = 1,
    n_min: int = 0,
    n_top: int = 3,
    eps0: float = 0.95,
    rho: float = 0.0,
    cutoff: int | None = None,
) -> CascadeConfig:
    """Dyadic constants on the default ball family."""
    return CascadeConfig.build(
        dyadic_default(m), BallFamily.default(m, eps0), n_min, n_top, cutoff, rho
    )


def scale_table(cfg: CascadeConfig) -> dict[int, float]:
    return {n: cfg.scale_factor(n) for n in range(cfg.n_min - 1, cfg.n_top + 1)}

