"""Slow, literal reference implementations used to cross-check the fast paths.

Everything here works on plain dictionaries ``{k: complex vector}`` and loops
mode by mode, following the defining formulas as directly as possible. None
of it shares code with the vectorised operators it is used to verify.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import linalg

Modes = dict[tuple[int, ...], np.ndarray]

TWO_PI = 2.0 * math.pi


def leray(k: tuple[int, ...], vec: np.ndarray) -> np.ndarray:
    kk = np.array(k, dtype=float)
    n2 = float(kk @ kk)
    if n2 == 0.0:
        return np.array(vec, dtype=complex)
    return vec - kk * (kk @ vec) / n2


def frame(k: tuple[int, ...]) -> list[np.ndarray]:
    """Orthonormal basis of ``k^perp`` via Gram-Schmidt from fixed axes.

    Uses the positive representative of ``+-k``; the reference axis is
    ``e3`` (``e2`` when ``k`` is parallel to ``e3``) in three dimensions.
    """
    kk = np.array(k, dtype=float)
    for x in kk:
        if x != 0:
            if x < 0:
                kk = -kk
            break
    if len(kk) == 2:
        return [np.array([-kk[1], kk[0]]) / math.hypot(kk[0], kk[1])]
    ref = np.array([0.0, 0.0, 1.0])
    a1 = np.cross(ref, kk)
    if np.linalg.norm(a1) < 1e-12:
        a1 = np.cross(np.array([0.0, 1.0, 0.0]), kk)
    a1 = a1 / np.linalg.norm(a1)
    a2 = np.cross(kk / np.linalg.norm(kk), a1)
    return [a1, a2]


def transport(k: tuple[int, ...], a: np.ndarray, u: Mapping) -> Modes:
    """``Pi((a e^{2 pi i k.x} . grad) u)`` without any truncation."""
    out: Modes = {}
    for l, vec in u.items():
        coef = 2j * math.pi * float(np.dot(a, l))
        if coef == 0:
            continue
        tgt = tuple(li + ki for li, ki in zip(l, k))
        out[tgt] = out.get(tgt, 0) + coef * np.asarray(vec, dtype=complex)
    return {m: leray(m, v) for m, v in out.items()}


def corrector(theta: Mapping[tuple[int, ...], float], nu: float, u: Mapping) -> Modes:
    """Literal double composition summed over the support of theta."""
    d = len(next(iter(theta)))
    c = d / (d - 1.0) * nu / sum(v * v for v in theta.values())
    out: Modes = {}
    for k, th in theta.items():
        mk = tuple(-x for x in k)
        for a in frame(k):
            inner = transport(mk, a, u)
            outer = transport(k, a, inner)
            for m, v in outer.items():
                out[m] = out.get(m, 0) + c * th * th * v
    return out


def transport_norms(theta: Mapping[tuple[int, ...], float], nu: float, u: Mapping) -> float:
    d = len(next(iter(theta)))
    c = d / (d - 1.0) * nu / sum(v * v for v in theta.values())
    total = 0.0
    for k, th in theta.items():
        for a in frame(k):
            g = transport(k, a, u)
            total += th * th * sum(float(np.sum(np.abs(v) ** 2)) for v in g.values())
    return c * total


def shell_theta(N: int, lam: float, d: int = 3) -> dict[tuple[int, ...], float]:
    out = {}
    rng = range(-2 * N, 2 * N + 1)
    for k in np.ndindex(*([len(rng)] * d)):
        kk = tuple(x - 2 * N for x in k)
        r2 = sum(x * x for x in kk)
        if N * N <= r2 <= 4 * N * N:
            out[kk] = r2 ** (-lam / 2.0)
    return out


def inner(u: Mapping, v: Mapping) -> float:
    return float(sum(np.real(np.vdot(v[k], u[k])) for k in u if k in v))


def semigroup_reference(
    modes: Iterable[tuple[int, ...]],
    operator: Callable[[Modes], Modes],
    u0: Mapping,
    times: Iterable[float],
) -> list[Modes]:
    """``exp(t L) u0`` by a dense matrix exponential of ``L`` on ``modes``.

    ``operator`` must map the span of ``modes`` into itself; its matrix is
    assembled column by column from unit vectors.
    """
    modes = list(modes)
    d = len(modes[0])
    n = len(modes) * d
    index = {m: j for j, m in enumerate(modes)}
    L = np.zeros((n, n), dtype=complex)
    for j, m in enumerate(modes):
        for c in range(d):
            e = np.zeros(d, dtype=complex)
            e[c] = 1.0
            img = operator({m: e})
            for mm, vec in img.items():
                if mm in index:
                    L[index[mm] * d : index[mm] * d + d, j * d + c] += vec
                elif np.any(np.abs(vec) > 1e-13):
                    raise ValueError(f"operator leaves the mode set at {mm}")
    x0 = np.zeros(n, dtype=complex)
    for m, vec in u0.items():
        x0[index[m] * d : index[m] * d + d] = vec
    out = []
    for t in times:
        x = linalg.expm(t * L) @ x0
        out.append({m: x[index[m] * d : index[m] * d + d] for m in modes})
    return out


def heat_plus_corrector(theta, nu: float, alpha: float) -> Callable[[Modes], Modes]:
    """``-(4 pi^2 |k|^2)^alpha + S_theta`` as a dictionary operator."""

    def op(u: Modes) -> Modes:
        s = corrector(theta, nu, u) if theta else {}
        out = dict(s)
        for k, v in u.items():
            lam = (4.0 * math.pi**2 * sum(x * x for x in k)) ** alpha if any(k) else 0.0
            out[k] = out.get(k, 0) - lam * np.asarray(v, dtype=complex)
        return out

    return op


def shell_rhs(u: np.ndarray, lam: float, a: float, nu_d: float, n_min: int = 0) -> np.ndarray:
    """Shell model right-hand side written term by term."""
    out = np.zeros(len(u))
    for j in range(len(u)):
        n = n_min + j
        prev = u[j - 1] if j > 0 else 0.0
        nxt = u[j + 1] if j + 1 < len(u) else 0.0
        out[j] = (
            lam ** (5 * n / 2) * prev**2
            - nu_d * lam ** (2 * a * n) * u[j]
            - lam ** (5 * (n + 1) / 2) * u[j] * nxt
        )
    return out
