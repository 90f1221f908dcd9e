"""Coefficient-space representation of periodic vector fields on the torus.

Fields are stored as dense complex arrays indexed by the lattice box
``|k|_inf <= cutoff``. The Fourier convention is ``exp(2 pi i k.x)`` so that
``-Delta`` acts as multiplication by ``4 pi^2 |k|^2``.

Besides the field container this module provides the Leray projection,
fractional Sobolev norms, frequency bands built from balls in an annulus and
the periodized wavelets supported on those bands.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)

FOUR_PI_SQ = 4.0 * math.pi**2


class EmptyBand(ValueError):
    """Raised when a frequency band contains no lattice points."""

    def __init__(self, i: int, n: int, minimal_n: int):
        self.i = i
        self.n = n
        self.minimal_n = minimal_n
        super().__init__(
            f"band (i={i}, n={n}) contains no lattice points; "
            f"scales n >= {minimal_n} are guaranteed to be nonempty"
        )


class DegenerateDirection(UserWarning):
    """Issued when a wave vector is parallel to the primary reference axis.

    The fallback axis is used in that case. Pass ``strict=True`` to the
    frame builders to raise this as an error instead.
    """


class CutoffTooSmall(ValueError):
    """Raised when a lattice box cannot hold the requested scales."""


# ---------------------------------------------------------------------------
# lattice helpers


@lru_cache(maxsize=64)
def lattice(dim: int, cutoff: int) -> np.ndarray:
    """Integer wave vectors of the box ``|k|_inf <= cutoff``.

    Returns a read-only array of shape ``(2N+1,)*dim + (dim,)``.
    """
    axis = np.arange(-cutoff, cutoff + 1)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    out = np.stack(grids, axis=-1).astype(np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def wavenumber_sq(dim: int, cutoff: int) -> np.ndarray:
    """``|k|^2`` on the lattice box, as floats."""
    k = lattice(dim, cutoff)
    out = np.sum(k.astype(float) ** 2, axis=-1)
    out.setflags(write=False)
    return out


def sobolev_weight(dim: int, cutoff: int, alpha: float) -> np.ndarray:
    """Per-mode factor ``(1 + 4 pi^2 |k|^2)^alpha``."""
    return (1.0 + FOUR_PI_SQ * wavenumber_sq(dim, cutoff)) ** alpha


def fractional_laplacian_symbol(dim: int, cutoff: int, alpha: float) -> np.ndarray:
    """Per-mode symbol ``(4 pi^2 |k|^2)^alpha`` of ``(-Delta)^alpha``."""
    k2 = wavenumber_sq(dim, cutoff)
    out = np.zeros_like(k2)
    nz = k2 > 0
    out[nz] = (FOUR_PI_SQ * k2[nz]) ** alpha
    return out


def lex_positive(k: np.ndarray) -> np.ndarray:
    """Boolean mask: first nonzero coordinate of ``k`` is positive.

    Works on arrays whose last axis is the lattice dimension. The zero
    vector is neither positive nor negative.
    """
    k = np.asarray(k)
    out = np.zeros(k.shape[:-1], dtype=bool)
    decided = np.zeros(k.shape[:-1], dtype=bool)
    for j in range(k.shape[-1]):
        comp = k[..., j]
        out |= (~decided) & (comp > 0)
        decided |= comp != 0
    return out


def flat_index(k: np.ndarray, cutoff: int) -> np.ndarray:
    """Row-major flat index of wave vectors inside the box."""
    k = np.asarray(k, dtype=np.int64)
    width = 2 * cutoff + 1
    shifted = k + cutoff
    idx = np.zeros(k.shape[:-1], dtype=np.int64)
    for j in range(k.shape[-1]):
        idx = idx * width + shifted[..., j]
    return idx


def perpendicular_frame(
    ks: np.ndarray, *, strict: bool = False, warn: bool = True
) -> np.ndarray:
    """Orthonormal basis of ``k^perp`` for each row of ``ks``.

    The basis depends only on ``+-k``: it is built from the lexicographically
    positive representative, so ``frame(-k) == frame(k)``. In three
    dimensions the first vector is ``normalize(e3 x k)``, falling back to
    ``e2`` as reference axis when ``k`` is parallel to ``e3``; the second is
    ``k_hat x a1``. In two dimensions the single vector is ``(-k2, k1)/|k|``.
    Use of the fallback issues :class:`DegenerateDirection` (when ``warn``)
    or raises it (when ``strict``).

    Returns an array of shape ``(K, d-1, d)``.
    """
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    d = ks.shape[-1]
    if np.any(np.all(ks == 0, axis=-1)):
        raise ValueError("the zero wave vector has no perpendicular frame")
    sign = np.where(lex_positive(ks), 1.0, -1.0)[:, None]
    kp = ks * sign
    norm = np.linalg.norm(kp, axis=-1, keepdims=True)
    khat = kp / norm
    if d == 2:
        a = np.stack([-khat[:, 1], khat[:, 0]], axis=-1)
        return a[:, None, :]
    if d != 3:
        raise ValueError(f"unsupported dimension {d}")
    e3 = np.array([0.0, 0.0, 1.0])
    e2 = np.array([0.0, 1.0, 0.0])
    a1 = np.cross(e3, kp)
    degenerate = np.linalg.norm(a1, axis=-1) < 1e-12 * norm[:, 0]
    if np.any(degenerate):
        msg = f"{int(degenerate.sum())} wave vector(s) parallel to e3; using e2 as reference"
        if strict:
            raise DegenerateDirection(msg)
        if warn:
            warnings.warn(msg, DegenerateDirection, stacklevel=2)
        a1[degenerate] = np.cross(e2, kp[degenerate])
    a1 /= np.linalg.norm(a1, axis=-1, keepdims=True)
    a2 = np.cross(khat, a1)
    return np.stack([a1, a2], axis=1)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Truncated Fourier coefficients of a vector field on the d-torus.

    ``coeffs[idx + (comp,)]`` holds component ``comp`` of ``u_hat(k)`` where
    ``idx = k + cutoff``. The array is copied on construction and made
    read-only, so instances can be shared freely.
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        shape = (2 * self.cutoff + 1,) * self.dim + (self.dim,)
        arr = np.array(self.coeffs, dtype=np.complex128, copy=True)
        if arr.shape != shape:
            raise ValueError(f"coeffs shape {arr.shape} does not match {shape}")
        if self.mean_zero and np.any(arr[self.center] != 0):
            raise ValueError("mean_zero flag set but the zero mode is nonzero")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    # construction -------------------------------------------------------
    @classmethod
    def zeros(cls, dim: int, cutoff: int, mean_zero: bool = False) -> "SpectralField":
        shape = (2 * cutoff + 1,) * dim + (dim,)
        return cls(dim, cutoff, np.zeros(shape, dtype=np.complex128), mean_zero)

    @classmethod
    def from_modes(
        cls,
        dim: int,
        cutoff: int,
        modes: Mapping[Sequence[int], Sequence[complex]],
        *,
        symmetrize: bool = True,
    ) -> "SpectralField":
        """Build a field from a mapping ``k -> u_hat(k)``.

        With ``symmetrize`` the conjugate partner ``u_hat(-k)`` is filled in
        for every given ``k`` so that the field is real.
        """
        arr = np.zeros((2 * cutoff + 1,) * dim + (dim,), dtype=np.complex128)
        for k, vec in modes.items():
            k = tuple(int(x) for x in k)
            if len(k) != dim or max(abs(x) for x in k) > cutoff:
                raise ValueError(f"mode {k} outside the box of cutoff {cutoff}")
            idx = tuple(x + cutoff for x in k)
            arr[idx] = np.asarray(vec, dtype=np.complex128)
            if symmetrize:
                neg = tuple(-x + cutoff for x in k)
                if neg == idx:
                    arr[idx] = arr[idx].real
                else:
                    arr[neg] = np.conj(arr[idx])
        return cls(dim, cutoff, arr)

    def replace(self, coeffs: np.ndarray, mean_zero: bool | None = None) -> "SpectralField":
        return SpectralField(
            self.dim, self.cutoff, coeffs, self.mean_zero if mean_zero is None else mean_zero
        )

    # views --------------------------------------------------------------
    @property
    def center(self) -> tuple[int, ...]:
        return (self.cutoff,) * self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape

    def __getitem__(self, k: Sequence[int]) -> np.ndarray:
        idx = tuple(int(x) + self.cutoff for x in k)
        return self.coeffs[idx]

    def support(self, tol: float = 0.0) -> set[tuple[int, ...]]:
        """Set of wave vectors whose coefficient exceeds ``tol`` in norm."""
        mag = np.linalg.norm(self.coeffs, axis=-1)
        ks = lattice(self.dim, self.cutoff)[mag > tol]
        return {tuple(int(x) for x in k) for k in ks}

    # algebra ------------------------------------------------------------
    def _check_compatible(self, other: "SpectralField"):
        if self.dim != other.dim or self.cutoff != other.cutoff:
            raise ValueError("fields live on different lattices")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(
            self.dim, self.cutoff, self.coeffs + other.coeffs, self.mean_zero and other.mean_zero
        )

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return SpectralField(
            self.dim, self.cutoff, self.coeffs - other.coeffs, self.mean_zero and other.mean_zero
        )

    def __mul__(self, scalar: complex) -> "SpectralField":
        return SpectralField(self.dim, self.cutoff, self.coeffs * scalar, self.mean_zero)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self * -1.0

    def inner(self, other: "SpectralField") -> float:
        """Real L^2 pairing ``Re sum_k u_hat(k) . conj(v_hat(k))`` (unit volume)."""
        self._check_compatible(other)
        return float(np.real(np.vdot(other.coeffs, self.coeffs)))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    # structural checks --------------------------------------------------
    def mirrored(self) -> np.ndarray:
        """Coefficients of ``k -> conj(u_hat(-k))``."""
        flip = self.coeffs[tuple(slice(None, None, -1) for _ in range(self.dim))]
        return np.conj(flip)

    def reality_residual(self) -> float:
        """Largest ``|u_hat(-k) - conj(u_hat(k))|`` over the box."""
        return float(np.max(np.abs(self.coeffs - self.mirrored()), initial=0.0))

    def is_real(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        return self.reality_residual() <= tol * scale

    def symmetrized(self) -> "SpectralField":
        """Closest real field: average of ``u`` and its conjugate mirror."""
        return self.replace(0.5 * (self.coeffs + self.mirrored()))

    def divergence_residual(self) -> float:
        """Largest ``|k . u_hat(k)| / |u_hat(k)|`` over nonzero modes."""
        k = lattice(self.dim, self.cutoff).astype(float)
        div = np.abs(np.sum(k * self.coeffs, axis=-1))
        mag = np.linalg.norm(self.coeffs, axis=-1)
        nz = mag > 0
        if not np.any(nz):
            return 0.0
        return float(np.max(div[nz] / mag[nz]))

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return self.divergence_residual() <= tol

    def resized(self, cutoff: int) -> "SpectralField":
        """Embed into (or restrict to) a box with a different cutoff."""
        out = np.zeros((2 * cutoff + 1,) * self.dim + (self.dim,), dtype=np.complex128)
        m = min(cutoff, self.cutoff)
        src = tuple(slice(self.cutoff - m, self.cutoff + m + 1) for _ in range(self.dim))
        dst = tuple(slice(cutoff - m, cutoff + m + 1) for _ in range(self.dim))
        out[dst] = self.coeffs[src]
        return SpectralField(self.dim, cutoff, out, self.mean_zero)

    # serialization ------------------------------------------------------
    def to_json_dict(self, tol: float = 0.0) -> dict:
        """JSON form storing the zero mode and lexicographically positive modes."""
        ks = lattice(self.dim, self.cutoff).reshape(-1, self.dim)
        flat = self.coeffs.reshape(-1, self.dim)
        keep = lex_positive(ks) | np.all(ks == 0, axis=-1)
        mag = np.linalg.norm(flat, axis=-1)
        modes = []
        for k, vec in zip(ks[keep & (mag > tol)], flat[keep & (mag > tol)]):
            modes.append(
                {"k": [int(x) for x in k], "re": vec.real.tolist(), "im": vec.imag.tolist()}
            )
        return {"dim": self.dim, "cutoff": self.cutoff, "modes": modes}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "SpectralField":
        modes = {
            tuple(m["k"]): np.asarray(m["re"], dtype=float) + 1j * np.asarray(m["im"], dtype=float)
            for m in doc["modes"]
        }
        return cls.from_modes(int(doc["dim"]), int(doc["cutoff"]), modes, symmetrize=True)

    @classmethod
    def from_json(cls, text: str) -> "SpectralField":
        return cls.from_json_dict(json.loads(text))


def leray_coeffs(coeffs: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Apply the Leray projection to an array of coefficients.

    ``coeffs`` has trailing shape ``(..., d)`` aligned with wave vectors
    ``ks`` of shape ``(..., d)``; leading batch axes broadcast. The zero
    mode is left untouched.
    """
    kf = ks.astype(float)
    k2 = np.sum(kf * kf, axis=-1)
    inv = np.divide(1.0, k2, out=np.zeros_like(k2), where=k2 > 0)
    proj = np.sum(kf * coeffs, axis=-1) * inv
    return coeffs - proj[..., None] * kf


def leray_project(f: SpectralField) -> SpectralField:
    """Project onto divergence-free fields, mode by mode."""
    return f.replace(leray_coeffs(f.coeffs, lattice(f.dim, f.cutoff)))


def sobolev_norm(f: SpectralField, alpha: float) -> float:
    """``(sum_k (1 + 4 pi^2 |k|^2)^alpha |u_hat(k)|^2)^(1/2)``."""
    w = sobolev_weight(f.dim, f.cutoff, alpha)
    return float(np.sqrt(np.sum(w * np.sum(np.abs(f.coeffs) ** 2, axis=-1))))


def homogeneous_norm(f: SpectralField, alpha: float) -> float:
    """``||(-Delta)^(alpha/2) f||_{L^2}``, ignoring the zero mode."""
    w = fractional_laplacian_symbol(f.dim, f.cutoff, alpha)
    return float(np.sqrt(np.sum(w * np.sum(np.abs(f.coeffs) ** 2, axis=-1))))


def bessel_potential(f: SpectralField, rho: float) -> SpectralField:
    """Apply ``(Id - Delta)^rho`` per mode."""
    w = sobolev_weight(f.dim, f.cutoff, rho)
    return f.replace(f.coeffs * w[..., None])


def mean_value(f: SpectralField) -> np.ndarray:
    """Spatial mean of the field; the torus has unit volume."""
    return np.array(f.coeffs[f.center])


def random_divergence_free(
    rng: np.random.Generator,
    dim: int,
    cutoff: int,
    *,
    radius: float | None = None,
    decay: float = 0.0,
) -> SpectralField:
    """Random real divergence-free mean-zero field.

    Coefficients are Gaussian with amplitude ``(1 + |k|^2)^(-decay/2)`` on
    the modes ``0 < |k| <= radius`` (all nonzero box modes by default).
    """
    shape = (2 * cutoff + 1,) * dim + (dim,)
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k2 = wavenumber_sq(dim, cutoff)
    mask = k2 > 0
    if radius is not None:
        mask &= k2 <= radius**2
    amp = np.where(mask, (1.0 + k2) ** (-decay / 2.0), 0.0)
    g = leray_project(SpectralField(dim, cutoff, raw * amp[..., None]).symmetrized())
    return g.replace(g.coeffs, mean_zero=True)


# ---------------------------------------------------------------------------
# balls, bands and wavelets


@dataclass(frozen=True, eq=False)
class BallFamily:
    """Balls ``B_1..B_m`` in the annulus ``1 < |xi| < 1 + eps0/2``.

    The balls together with their reflections ``-B_i`` must be pairwise
    disjoint. Centers are stored as an ``(m, 3)`` array.
    """

    eps0: float
    centers: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.array(self.centers, dtype=float, copy=True).reshape(-1, 3)
        r = np.array(self.radii, dtype=float, copy=True).reshape(-1)
        if r.size == 1 and c.shape[0] > 1:
            r = np.full(c.shape[0], r[0])
        if r.shape[0] != c.shape[0]:
            raise ValueError("need one radius per ball")
        if not 0.0 < self.eps0 < 1.0:
            raise ValueError("eps0 must lie in (0, 1)")
        if np.any(r <= 0):
            raise ValueError("radii must be positive")
        c.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        problems = self.problems()
        if problems:
            raise ValueError("invalid ball family: " + "; ".join(problems))

    @property
    def m(self) -> int:
        return self.centers.shape[0]

    @property
    def scale(self) -> float:
        """The geometric ratio ``lambda = 1 + eps0``."""
        return 1.0 + self.eps0

    def problems(self) -> list[str]:
        out = []
        outer = 1.0 + self.eps0 / 2.0
        for i, (c, r) in enumerate(zip(self.centers, self.radii), start=1):
            dist = float(np.linalg.norm(c))
            if dist - r <= 1.0 or dist + r >= outer:
                out.append(f"ball {i} is not inside the annulus (1, {outer:g})")
        pts = np.concatenate([self.centers, -self.centers])
        rad = np.concatenate([self.radii, self.radii])
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                if np.linalg.norm(pts[a] - pts[b]) <= rad[a] + rad[b]:
                    out.append(f"balls {a} and {b} of the symmetric family overlap")
        return out

    @classmethod
    def default(cls, m: int = 1, eps0: float = 0.95) -> "BallFamily":
        """Illustrative geometry whose bands are nonempty from scale 0 on.

        Ball centers point roughly along the lattice diagonals ``(1,0,1)``,
        ``(1,1,0)`` and ``(0,1,1)``; at ``eps0 = 0.95`` every scale
        ``n >= 0`` of each ball contains lattice points. At most three balls
        are available.
        """
        dirs = np.array(
            [
                [0.706, -0.012, 0.708],
                [0.705, 0.709, 0.003],
                [0.016, 0.709, 0.705],
            ]
        )
        if not 1 <= m <= len(dirs):
            raise ValueError(f"default family supports 1..{len(dirs)} balls")
        dirs = dirs[:m] / np.linalg.norm(dirs[:m], axis=1, keepdims=True)
        center_radius = 1.0 + eps0 / 4.0
        radius = 0.23 * eps0 / 0.95
        return cls(eps0, dirs * center_radius, np.full(m, radius))

    def to_json_dict(self) -> dict:
        return {"eps0": self.eps0, "centers": self.centers.tolist(), "radii": self.radii.tolist()}

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "BallFamily":
        return cls(float(doc["eps0"]), np.asarray(doc["centers"]), np.asarray(doc["radii"]))


def required_cutoff(family: BallFamily, n_top: int) -> int:
    """Smallest box cutoff holding every band up to scale ``n_top``."""
    return int(math.ceil(family.scale**n_top * (1.0 + family.eps0 / 2.0)))


@dataclass(frozen=True)
class FrequencyBand:
    """Lattice points of ``(1+eps0)^n (B_i u -B_i)``; ``i`` counts from 1."""

    family: BallFamily
    i: int
    n: int

    def __post_init__(self):
        if not 1 <= self.i <= self.family.m:
            raise ValueError(f"ball index {self.i} outside 1..{self.family.m}")

    @property
    def eps0(self) -> float:
        return self.family.eps0

    @property
    def center(self) -> np.ndarray:
        return self.family.centers[self.i - 1]

    @property
    def radius(self) -> float:
        return float(self.family.radii[self.i - 1])

    @property
    def dilation(self) -> float:
        return self.family.scale**self.n

    def minimal_guaranteed_n(self) -> int:
        """Smallest scale at which the dilated ball surely contains a lattice point.

        A ball of diameter at least ``sqrt(3)`` always contains a point of Z^3.
        """
        need = math.sqrt(3.0) / (2.0 * self.radius)
        return max(0, int(math.ceil(math.log(need) / math.log(self.family.scale))))

    def relative_distance(self, ks: np.ndarray) -> np.ndarray:
        """``|xi - c| / r`` for ``xi = k / lambda^n`` with the nearer of ``+-c``."""
        xi = np.asarray(ks, dtype=float) / self.dilation
        dp = np.linalg.norm(xi - self.center, axis=-1)
        dm = np.linalg.norm(xi + self.center, axis=-1)
        return np.minimum(dp, dm) / self.radius

    def lattice_points(self) -> np.ndarray:
        """Sorted integer points strictly inside the dilated balls."""
        return _band_points(self.family.eps0, tuple(self.center), self.radius, self.n)

    def require_points(self) -> np.ndarray:
        pts = self.lattice_points()
        if len(pts) == 0:
            raise EmptyBand(self.i, self.n, self.minimal_guaranteed_n())
        return pts

    def inner_weight(self) -> float:
        """``1 + 4 pi^2 lambda^(2n)``: Sobolev weight at the band's inner radius."""
        return 1.0 + FOUR_PI_SQ * self.dilation**2

    def outer_weight(self) -> float:
        return 1.0 + FOUR_PI_SQ * self.dilation**2 * (1.0 + self.eps0 / 2.0) ** 2


@lru_cache(maxsize=256)
def _band_points(eps0: float, center: tuple, radius: float, n: int) -> np.ndarray:
    lam_n = (1.0 + eps0) ** n
    c = np.asarray(center) * lam_n
    r = radius * lam_n
    found = []
    for sgn in (1.0, -1.0):
        cc = sgn * c
        lo = np.floor(cc - r).astype(int)
        hi = np.ceil(cc + r).astype(int)
        axes = [np.arange(lo[j], hi[j] + 1) for j in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        inside = np.linalg.norm(grid - cc, axis=-1) < r
        found.append(grid[inside])
    pts = np.concatenate(found)
    pts = pts[np.lexsort(pts.T[::-1])]
    pts.setflags(write=False)
    return pts


def band_mask(f_or_dims: SpectralField | tuple[int, int], band: FrequencyBand) -> np.ndarray:
    if isinstance(f_or_dims, SpectralField):
        dim, cutoff = f_or_dims.dim, f_or_dims.cutoff
    else:
        dim, cutoff = f_or_dims
    pts = band.require_points()
    if np.max(np.abs(pts)) > cutoff:
        raise CutoffTooSmall(f"band (i={band.i}, n={band.n}) exceeds cutoff {cutoff}")
    mask = np.zeros((2 * cutoff + 1,) * dim, dtype=bool)
    mask[tuple((pts + cutoff).T)] = True
    return mask


def band_project(f: SpectralField, band: FrequencyBand) -> SpectralField:
    """Keep only the coefficients on the band's lattice points."""
    if f.dim != 3:
        raise ValueError("frequency bands are defined on the 3-torus")
    mask = band_mask(f, band)
    return f.replace(np.where(mask[..., None], f.coeffs, 0.0))


def band_estimate_check(
    f: SpectralField, band: FrequencyBand, kappa: float, beta: float
) -> tuple[float, float]:
    """Both sides of the band localisation estimate.

    ``lhs = ||P_band f||_{H^kappa}`` and
    ``rhs = (1 + 4 pi^2 lambda^(2n))^(-beta/2) ||f||_{H^(kappa+beta)}``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    lhs = sobolev_norm(band_project(f, band), kappa)
    rhs = band.inner_weight() ** (-beta / 2.0) * sobolev_norm(f, kappa + beta)
    return lhs, rhs


def band_estimate_constant(band: FrequencyBand, kappa: float, beta: float) -> float:
    """Shell-spread constant ``(w_outer / w_inner)^(|kappa+beta|/2)``."""
    return (band.outer_weight() / band.inner_weight()) ** (abs(kappa + beta) / 2.0)


@dataclass(frozen=True)
class BumpProfile:
    """Smooth bump ``exp(-1/(1-s^2))`` with ``s = |xi - c|/r`` on each ball.

    With ``normalize`` the bump is scaled so that its square integrates to
    one over R^3 (both balls together).
    """

    normalize: bool = True

    def profile(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
        return out

    def l2_mass(self, radius: float) -> float:
        """``int chi^2`` over one ball of the given radius."""
        val, _ = integrate.quad(
            lambda s: math.exp(-2.0 / (1.0 - s * s)) * s * s, 0.0, 1.0, epsabs=0, epsrel=1e-13
        )
        return 4.0 * math.pi * radius**3 * val

    def amplitude(self, band: FrequencyBand, ks: np.ndarray) -> np.ndarray:
        chi = self.profile(band.relative_distance(ks))
        if self.normalize:
            chi = chi / math.sqrt(2.0 * self.l2_mass(band.radius))
        return chi


@dataclass(frozen=True, eq=False)
class PeriodizedWavelet:
    """Unit-norm divergence-free field supported on one band.

    ``points`` are the band's lattice points and ``vectors`` the real
    coefficient vectors there (the field equals ``vectors`` at ``points``
    and vanishes elsewhere).
    """

    band: FrequencyBand
    field: SpectralField
    norm_factor: float
    points: np.ndarray
    vectors: np.ndarray

    def coefficient(self, u: SpectralField) -> float:
        """``<u, psi>`` computed exactly from the band coefficients."""
        vals = u.coeffs[tuple((self.points + u.cutoff).T)]
        return float(np.sum(vals.real * self.vectors))


def build_wavelet(
    band: FrequencyBand,
    profile: BumpProfile | None = None,
    cutoff: int | None = None,
    *,
    strict: bool = False,
) -> PeriodizedWavelet:
    """Sample the dilated bump at the band's lattice points and normalize.

    The raw coefficient at ``k`` is
    ``lambda^(-3n/2) chi(lambda^(-n) k) e(k)`` with ``e(k)`` the first
    vector of :func:`perpendicular_frame`. Points whose bump value
    underflows to zero are floored at the smallest normal float so that the
    support equals the band exactly.
    """
    profile = profile or BumpProfile()
    pts = band.require_points()
    lam_n = band.dilation
    if cutoff is None:
        cutoff = int(np.max(np.abs(pts)))
    if np.max(np.abs(pts)) > cutoff:
        raise CutoffTooSmall(f"band (i={band.i}, n={band.n}) exceeds cutoff {cutoff}")
    amp = lam_n ** (-1.5) * profile.amplitude(band, pts)
    e = perpendicular_frame(pts, strict=strict)[:, 0, :]
    raw_norm = float(np.sqrt(np.sum(amp**2)))
    if raw_norm == 0.0:
        raise EmptyBand(band.i, band.n, band.minimal_guaranteed_n())
    factor = 1.0 / raw_norm
    amp = amp * factor
    tiny = np.finfo(float).tiny
    if np.any(amp < tiny):
        logger.debug("flooring %d underflowed bump values", int(np.sum(amp < tiny)))
        amp = np.maximum(amp, tiny)
    vectors = amp[:, None] * e
    vectors.setflags(write=False)
    coeffs = np.zeros((2 * cutoff + 1,) * 3 + (3,), dtype=np.complex128)
    coeffs[tuple((pts + cutoff).T)] = vectors
    fld = SpectralField(3, cutoff, coeffs, mean_zero=True)
    return PeriodizedWavelet(band, fld, factor, pts, vectors)


def wavelet_family(
    family: BallFamily,
    n_min: int,
    n_top: int,
    cutoff: int | None = None,
    profile: BumpProfile | None = None,
) -> dict[tuple[int, int], PeriodizedWavelet]:
    """All wavelets ``(i, n)`` for ``i = 1..m`` and ``n_min <= n <= n_top``."""
    if cutoff is None:
        cutoff = required_cutoff(family, n_top)
    elif cutoff < required_cutoff(family, n_top):
        raise CutoffTooSmall(
            f"cutoff {cutoff} below required {required_cutoff(family, n_top)} for n_top={n_top}"
        )
    out = {}
    for i in range(1, family.m + 1):
        for n in range(n_min, n_top + 1):
            out[(i, n)] = build_wavelet(FrequencyBand(family, i, n), profile, cutoff)
    return out


def gram_matrix(wavelets: Iterable[PeriodizedWavelet]) -> np.ndarray:
    ws = list(wavelets)
    g = np.empty((len(ws), len(ws)))
    for a, wa in enumerate(ws):
        for b, wb in enumerate(ws):
            g[a, b] = wa.field.inner(wb.field)
    return g
