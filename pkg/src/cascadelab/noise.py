"""Transport noise: theta sequences, the divergence-free basis and the Ito corrector.

The noise is ``sum_{k,i} c theta_k Pi((sigma_{k,i} . grad) u) dW^{k,i}`` with
``sigma_{k,i} = a_{k,i} exp(2 pi i k.x)`` and ``c = sqrt(C_d nu) / ||theta||``,
``C_d = d / (d - 1)``. Converting the Stratonovich integral to Ito form adds
the corrector

    S_theta(u) = (C_d nu / ||theta||^2) sum_{k,i} theta_k^2
                 Pi((sigma_{k,i} . grad) Pi((sigma_{-k,i} . grad) u)),

which is frequency preserving: per mode ``l`` it is the 3x3 matrix
``-4 pi^2 (C_d nu/||theta||^2) sum_k theta_k^2 |P_k l|^2 P_l P_{l-k}`` with
``P_m`` the projection onto ``m^perp``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .torus import (
    FOUR_PI_SQ,
    SpectralField,
    lattice,
    leray_coeffs,
    lex_positive,
    perpendicular_frame,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def dimension_constant(d: int) -> float:
    """``C_d = d / (d - 1)``."""
    if d < 2:
        raise ValueError("need d >= 2")
    return d / (d - 1.0)


@dataclass(frozen=True, eq=False)
class ThetaSequence:
    """Finitely supported radially symmetric weights ``theta_k``.

    ``ks`` is sorted lexicographically and contains both ``k`` and ``-k``.
    """

    dim: int
    ks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ks = np.array(self.ks, dtype=np.int64, copy=True).reshape(-1, self.dim)
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if len(ks) != len(vals):
            raise ValueError("one value per wave vector required")
        if len(ks) == 0 or not np.any(vals != 0):
            raise ValueError("theta must have a nonzero entry")
        if np.any(np.all(ks == 0, axis=1)):
            raise ValueError("theta is indexed by nonzero wave vectors")
        order = np.lexsort(ks.T[::-1])
        ks, vals = ks[order], vals[order]
        if len({tuple(k) for k in ks}) != len(ks):
            raise ValueError("duplicate wave vectors")
        k2 = np.sum(ks**2, axis=1)
        for r2 in np.unique(k2):
            shell = vals[k2 == r2]
            if np.ptp(shell) > 1e-15 * max(1.0, float(np.max(np.abs(shell)))):
                raise ValueError(f"theta is not radially symmetric on |k|^2 = {r2}")
        present = {tuple(k) for k in ks}
        if any(tuple(-k) not in present for k in ks):
            raise ValueError("support must be symmetric under k -> -k")
        ks.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "ks", ks)
        object.__setattr__(self, "values", vals)

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def reach(self) -> int:
        """Largest ``|k|_inf`` in the support."""
        return int(np.max(np.abs(self.ks)))

    def entries(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(x) for x in k): float(v) for k, v in zip(self.ks, self.values)}

    def positive(self) -> tuple[np.ndarray, np.ndarray]:
        """Lexicographically positive half of the support and its weights."""
        mask = lex_positive(self.ks)
        return self.ks[mask], self.values[mask]

    @classmethod
    def from_entries(cls, dim: int, entries: Mapping[Sequence[int], float]) -> "ThetaSequence":
        ks = np.array([list(k) for k in entries], dtype=np.int64)
        return cls(dim, ks, np.array(list(entries.values()), dtype=float))


@lru_cache(maxsize=32)
def _shell_points(N: int, d: int) -> np.ndarray:
    axis = np.arange(-2 * N, 2 * N + 1)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    k2 = np.sum(grid**2, axis=1)
    pts = grid[(k2 >= N * N) & (k2 <= 4 * N * N)]
    pts.setflags(write=False)
    return pts


def theta_shell(N: int, lambda_exp: float, d: int = 3) -> ThetaSequence:
    """``theta_k = |k|^(-lambda)`` on ``N <= |k| <= 2N`` and zero elsewhere."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if lambda_exp < 0:
        raise ValueError("lambda must be nonnegative")
    ks = _shell_points(N, d)
    vals = np.sum(ks.astype(float) ** 2, axis=1) ** (-lambda_exp / 2.0)
    return ThetaSequence(d, ks, vals)


@dataclass(frozen=True)
class NoiseBasis:
    """Orthonormal frames ``a_{k,1..d-1}`` of ``k^perp`` with ``a_{-k,i} = a_{k,i}``.

    Wave vectors along ``e3`` use the fallback reference axis silently; set
    ``strict`` to raise :class:`DegenerateDirection` for them instead.
    """

    dim: int
    strict: bool = False

    def vectors(self, ks: np.ndarray) -> np.ndarray:
        """Frames for each row of ``ks``, shape ``(K, d-1, d)``."""
        ks = np.asarray(ks).reshape(-1, self.dim)
        return perpendicular_frame(ks, strict=self.strict, warn=False)

    def a(self, k: Sequence[int], i: int) -> np.ndarray:
        """The vector ``a_{k,i}`` with ``i`` counted from 1."""
        if not 1 <= i <= self.dim - 1:
            raise ValueError(f"component index {i} outside 1..{self.dim - 1}")
        return self.vectors(np.asarray(k))[0, i - 1]

    @staticmethod
    def sign(k: Sequence[int]) -> int:
        """+1 on the positive half lattice, -1 on its mirror image."""
        return 1 if bool(lex_positive(np.asarray(k)[None, :])[0]) else -1


# ---------------------------------------------------------------------------
# Brownian family


@dataclass
class BrownianDriver:
    """Complex Brownian increments indexed by the support of theta.

    For ``k`` in the positive half lattice, real motions ``B^{k,i}`` and
    ``B^{-k,i}`` give ``W^{k,i} = B^{k,i} + i B^{-k,i}`` and
    ``W^{-k,i} = conj(W^{k,i})``. Then ``[W^{k,i}, W^{l,j}]_t = 2t`` when
    ``l = -k, j = i`` and zero otherwise.
    """

    theta: ThetaSequence
    seed: int
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        self.kpos, _ = self.theta.positive()

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.kpos), self.theta.dim - 1)

    def real_increments(self, dt: float) -> np.ndarray:
        """``(2, K+, d-1)`` array: ``dB^{k,i}`` then ``dB^{-k,i}``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return math.sqrt(dt) * self.rng.standard_normal((2,) + self.shape)

    def step(self, dt: float) -> np.ndarray:
        """Complex increments ``dW^{k,i}`` on the positive half, shape ``(K+, d-1)``."""
        b = self.real_increments(dt)
        return b[0] + 1j * b[1]


def complex_from_real(b: np.ndarray) -> np.ndarray:
    """Combine real increments ``(..., 2, K+, d-1)`` into ``dW`` on the positive half."""
    return b[..., 0, :, :] + 1j * b[..., 1, :, :]


def brownian_increments(driver: BrownianDriver, dt: float) -> dict[tuple[tuple[int, ...], int], complex]:
    """One step of increments for every ``(k, i)`` with ``k`` in the support."""
    dw = driver.step(dt)
    out = {}
    for k, row in zip(driver.kpos, dw):
        kp = tuple(int(x) for x in k)
        km = tuple(-int(x) for x in k)
        for i, w in enumerate(row, start=1):
            out[(kp, i)] = complex(w)
            out[(km, i)] = complex(np.conj(w))
    return out


# ---------------------------------------------------------------------------
# noise and corrector operators


def shift_slices(cutoff: int, k: Sequence[int]) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    """Index slices moving mode ``l`` to ``l + k`` inside one box.

    Returns ``(src, dst)`` such that ``out[dst] = in[src]`` realises the shift
    for all ``l`` whose image stays in the box.
    """
    width = 2 * cutoff + 1
    src, dst = [], []
    for kj in k:
        kj = int(kj)
        if kj >= 0:
            src.append(slice(0, max(width - kj, 0)))
            dst.append(slice(kj, width))
        else:
            src.append(slice(-kj, width))
            dst.append(slice(0, max(width + kj, 0)))
    return tuple(src), tuple(dst)


def noise_apply(
    basis: NoiseBasis,
    k: Sequence[int],
    i: int,
    u: SpectralField,
    *,
    return_loss: bool = False,
):
    """``Pi((sigma_{k,i} . grad) u)`` on the same lattice box.

    Mode ``l`` of ``u`` contributes ``2 pi i (a_{k,i} . l) u_hat(l)`` at
    ``l + k``; the result is Leray projected. Modes pushed outside the box
    are discarded and their L^2 mass logged (and returned as a second value
    with ``return_loss``).
    """
    k = np.asarray(k, dtype=np.int64)
    a = basis.a(k, i)
    ls = lattice(u.dim, u.cutoff)
    factor = 2j * math.pi * (ls.astype(float) @ a)
    shifted = factor[..., None] * u.coeffs
    # projected contribution of every source mode, including the discarded ones
    full = leray_coeffs(shifted, ls + k)
    src, dst = shift_slices(u.cutoff, k)
    out = np.zeros_like(u.coeffs)
    out[dst] = full[src]
    kept = np.zeros(full.shape[:-1], dtype=bool)
    kept[src] = True
    loss = float(np.sum(np.abs(full[~kept]) ** 2))
    if loss > 0:
        logger.debug("noise_apply k=%s i=%d discarded %.3e of L2 mass", k.tolist(), i, loss)
    res = SpectralField(u.dim, u.cutoff, out)
    return (res, loss) if return_loss else res


def _pair_sums(
    theta: ThetaSequence, basis: NoiseBasis, ls: np.ndarray, block: int = 2_000_000
) -> tuple[np.ndarray, np.ndarray]:
    """``A(l) = sum_k theta^2 |P_k l|^2`` and ``B(l) = sum_k theta^2 |P_k l|^2 m m^T/|m|^2``.

    ``m = l - k``; terms with ``m = 0`` vanish because ``|P_k l|^2 = 0`` there.
    """
    d = theta.dim
    ls = np.asarray(ls, dtype=float).reshape(-1, d)
    ks = theta.ks.astype(float)
    frames = basis.vectors(theta.ks)
    w = theta.values**2
    A = np.zeros(len(ls))
    B = np.zeros((len(ls), d, d))
    step = max(1, block // max(len(ks), 1))
    for start in range(0, len(ls), step):
        lb = ls[start : start + step]
        proj = np.einsum("kid,ld->lki", frames, lb)
        q = np.sum(proj**2, axis=-1) * w[None, :]
        m = lb[:, None, :] - ks[None, :, :]
        m2 = np.sum(m * m, axis=-1)
        coef = np.divide(q, m2, out=np.zeros_like(q), where=m2 > 0)
        A[start : start + step] = np.sum(q, axis=1)
        B[start : start + step] = np.einsum("lk,lka,lkb->lab", coef, m, m)
    return A, B


def corrector_matrices(
    theta: ThetaSequence, basis: NoiseBasis, nu: float, ls: np.ndarray
) -> np.ndarray:
    """Per-mode matrices of ``S_theta`` for the wave vectors ``ls``, shape ``(L, d, d)``."""
    d = theta.dim
    ls = np.asarray(ls, dtype=float).reshape(-1, d)
    A, B = _pair_sums(theta, basis, ls)
    l2 = np.sum(ls * ls, axis=1)
    inv = np.divide(1.0, l2, out=np.zeros_like(l2), where=l2 > 0)
    P = np.eye(d)[None] - ls[:, :, None] * ls[:, None, :] * inv[:, None, None]
    P[l2 == 0] = np.eye(d)
    M = A[:, None, None] * P - np.einsum("lab,lbc->lac", P, B)
    c = dimension_constant(d) * nu / theta.l2_norm**2
    return -FOUR_PI_SQ * c * M


_MATRIX_CACHE: dict = {}


def corrector_field_matrices(
    theta: ThetaSequence, basis: NoiseBasis, nu: float, dim: int, cutoff: int
) -> np.ndarray:
    """Corrector matrices on every mode of a lattice box, shape ``box + (d, d)``."""
    key = (id(theta), dim, cutoff, float(nu))
    hit = _MATRIX_CACHE.get(key)
    if hit is not None and hit[0] is theta:
        return hit[1]
    ls = lattice(dim, cutoff)
    M = corrector_matrices(theta, basis, nu, ls.reshape(-1, dim)).reshape(ls.shape + (dim,))
    M.setflags(write=False)
    if len(_MATRIX_CACHE) > 16:
        _MATRIX_CACHE.clear()
    _MATRIX_CACHE[key] = (theta, M)
    return M


def corrector_apply(
    theta: ThetaSequence, basis: NoiseBasis, nu: float, u: SpectralField
) -> SpectralField:
    """Exact ``S_theta(u)`` on the stored modes.

    The intermediate shift to ``l - k`` is carried out analytically, so no
    working lattice is needed and nothing is truncated.
    """
    if theta.dim != u.dim:
        raise ValueError("dimension mismatch")
    M = corrector_field_matrices(theta, basis, nu, u.dim, u.cutoff)
    out = np.einsum("...ij,...j->...i", M, u.coeffs)
    return SpectralField(u.dim, u.cutoff, out)


def transport_energy(theta: ThetaSequence, basis: NoiseBasis, nu: float, u: SpectralField) -> float:
    """``(C_d nu/||theta||^2) sum_{k,i} theta_k^2 ||Pi((sigma_{k,i}.grad) u)||^2`` without truncation."""
    d = u.dim
    ls = lattice(d, u.cutoff).reshape(-1, d)
    coeffs = u.coeffs.reshape(-1, d)
    live = np.linalg.norm(coeffs, axis=1) > 0
    ls, coeffs = ls[live].astype(float), coeffs[live]
    frames = basis.vectors(theta.ks)
    total = 0.0
    for k, fr, th in zip(theta.ks.astype(float), frames, theta.values):
        q = np.sum((ls @ fr.T) ** 2, axis=1)
        proj = leray_coeffs(coeffs, ls + k)
        total += th**2 * FOUR_PI_SQ * float(np.sum(q * np.sum(np.abs(proj) ** 2, axis=1)))
    return dimension_constant(d) * nu / theta.l2_norm**2 * total


def limit_operator(phi: SpectralField, nu: float) -> SpectralField:
    """``(3 nu / 5) Delta phi``, the three-dimensional scaling limit of the corrector."""
    if phi.dim != 3:
        raise ValueError("the 3/5 limit is specific to three dimensions")
    k2 = np.sum(lattice(3, phi.cutoff).astype(float) ** 2, axis=-1)
    return phi.replace(-0.6 * nu * FOUR_PI_SQ * k2[..., None] * phi.coeffs)


def corrector_on_support(
    theta: ThetaSequence, basis: NoiseBasis, nu: float, phi: SpectralField
) -> SpectralField:
    """``S_theta(phi)`` evaluated only on the modes where ``phi`` is nonzero."""
    ls = lattice(phi.dim, phi.cutoff)
    live = np.linalg.norm(phi.coeffs, axis=-1) > 0
    M = corrector_matrices(theta, basis, nu, ls[live])
    out = np.zeros_like(phi.coeffs)
    out[live] = np.einsum("lij,lj->li", M, phi.coeffs[live])
    return phi.replace(out)


def corrector_limit_error(
    N: int, lambda_exp: float, nu: float, phi: SpectralField, *, relative: bool = False
) -> float:
    """``||S_{theta^N}(phi) - (3 nu/5) Delta phi||_{L^2}`` (optionally relative)."""
    if phi.dim != 3:
        raise ValueError("the scaling limit is stated in three dimensions")
    theta = theta_shell(N, lambda_exp, 3)
    s = corrector_on_support(theta, NoiseBasis(3), nu, phi)
    ref = limit_operator(phi, nu)
    err = (s - ref).norm()
    if relative:
        scale = ref.norm()
        return err / scale if scale > 0 else 0.0
    return err


def single_mode(l: Sequence[int], cutoff: int | None = None, amplitude: float = 1.0) -> SpectralField:
    """Real divergence-free field at ``+-l`` with unit L^2 norm times ``amplitude``."""
    l = np.asarray(l, dtype=np.int64)
    d = len(l)
    if cutoff is None:
        cutoff = int(np.max(np.abs(l)))
    e = perpendicular_frame(l[None, :], warn=False)[0, 0]
    vec = amplitude * e / math.sqrt(2.0)
    return SpectralField.from_modes(d, cutoff, {tuple(l): vec})
