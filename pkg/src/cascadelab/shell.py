"""Dyadic shell models and the wavelet-coefficient cascade system.

The scalar shell model

    du_n/dt = lambda^(5n/2) u_(n-1)^2 - nu_d lambda^(2an) u_n - lambda^(5(n+1)/2) u_n u_(n+1)

moves energy from shell ``n`` to shell ``n+1``; its quadratic part conserves
``sum u_n^2`` exactly. Shells outside the stored window are treated as zero
at both ends.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .cascade import StructureConstants, validate

logger = logging.getLogger(__name__)


class StepUnderflow(RuntimeError):
    """The adaptive step size dropped below the floor; treated as blow-up evidence."""


@dataclass(frozen=True)
class ShellState:
    """Real shell amplitudes ``u[n - n_min]`` for ``n_min <= n <= n_top``."""

    n_min: int
    u: np.ndarray
    lam: float = 2.0
    diss_exp: float = 1.0
    nu_d: float = 1.0
    nonlinear: bool = True

    def __post_init__(self):
        arr = np.array(self.u, dtype=float, copy=True).reshape(-1)
        if arr.size == 0:
            raise ValueError("need at least one shell")
        if self.lam <= 1.0:
            raise ValueError("lambda must exceed 1")
        arr.setflags(write=False)
        object.__setattr__(self, "u", arr)

    @property
    def n_top(self) -> int:
        return self.n_min + self.u.size - 1

    @property
    def shells(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_top + 1)

    def with_u(self, u: np.ndarray) -> "ShellState":
        return replace(self, u=u)

    @classmethod
    def single_shell(cls, n_min: int, nshells: int, n0: int, amplitude: float = 1.0, **kw):
        u = np.zeros(nshells)
        u[n0 - n_min] = amplitude
        return cls(n_min, u, **kw)


def _rates(s: ShellState) -> tuple[np.ndarray, np.ndarray]:
    n = s.shells.astype(float)
    gain = s.lam ** (2.5 * n)
    damp = s.nu_d * s.lam ** (2.0 * s.diss_exp * n)
    return gain, damp


def _rhs_array(u: np.ndarray, gain: np.ndarray, damp: np.ndarray, nonlinear: bool) -> np.ndarray:
    """``gain[n] = lambda^(5n/2)``; the outflow of shell n uses ``gain[n+1]``."""
    out = -damp * u
    if nonlinear:
        prev = np.concatenate(([0.0], u[:-1]))
        inflow = gain * prev**2
        outflow = np.concatenate((gain[1:] * u[:-1] * u[1:], [0.0]))
        out = out + inflow - outflow
    return out


def dyadic_rhs(s: ShellState) -> np.ndarray:
    """Time derivative of every stored shell."""
    gain, damp = _rates(s)
    return _rhs_array(s.u, gain, damp, s.nonlinear)


def nonlinear_flux(s: ShellState) -> np.ndarray:
    """Quadratic part of the right-hand side only."""
    return dyadic_rhs(replace(s, nu_d=0.0, nonlinear=True))


def sobolev_proxy(s: ShellState, order: float) -> float:
    """``(sum_n (1 + lambda^(2 s n)) u_n^2)^(1/2)``."""
    n = s.shells.astype(float)
    return float(np.sqrt(np.sum((1.0 + s.lam ** (2.0 * order * n)) * s.u**2)))


def energy(s: ShellState) -> float:
    return float(np.sum(s.u**2))


@dataclass
class ShellTrajectory:
    times: np.ndarray
    u: np.ndarray
    energy: np.ndarray
    proxy: np.ndarray
    proxy_order: float
    blowup: bool
    decay: bool
    reason: str
    top_shell_max: float
    rejected_steps: int = 0
    accepted_steps: int = 0

    def to_rows(self, n_min: int) -> tuple[list[str], list[list[float]]]:
        header = ["t"] + [f"u_{n_min + j}" for j in range(self.u.shape[1])] + ["energy", "proxy_s"]
        rows = [
            [float(t), *map(float, u), float(e), float(p)]
            for t, u, e, p in zip(self.times, self.u, self.energy, self.proxy)
        ]
        return header, rows


def _rk4_step(u, dt, gain, damp, nonlinear):
    k1 = _rhs_array(u, gain, damp, nonlinear)
    k2 = _rhs_array(u + 0.5 * dt * k1, gain, damp, nonlinear)
    k3 = _rhs_array(u + 0.5 * dt * k2, gain, damp, nonlinear)
    k4 = _rhs_array(u + dt * k3, gain, damp, nonlinear)
    return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(
    s: ShellState,
    T: float,
    dt: float,
    method: str = "RK4",
    *,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    adaptive: bool = True,
    dt_min: float = 1e-12,
    proxy_order: float = 2.1,
    proxy_threshold: float | None = 1e12,
    record_every: float | None = None,
    stop_on_decay: bool = True,
    raise_on_underflow: bool = False,
) -> ShellTrajectory:
    """Integrate the shell model with RK4 and step-halving error control.

    ``dt`` is the largest step taken. Each step is compared against two
    half steps; the Richardson estimate ``max|u_half - u_full| / 15`` must
    stay below ``atol + rtol max|u|`` or the step is halved. Integration
    stops early when the proxy norm crosses ``proxy_threshold`` (blow-up flag) or the
    step falls below ``dt_min`` (blow-up flag, reason ``step-underflow``).
    The decay flag is set when the l2 norm decreased monotonically at the
    recorded times and ended below ``1e-6`` times its initial value; with
    ``stop_on_decay`` the run ends as soon as that level is reached. With
    ``raise_on_underflow`` a collapsing step raises :class:`StepUnderflow`
    instead of being returned as a flagged trajectory.
    """
    if method.upper() != "RK4":
        raise ValueError(f"unknown method {method}")
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    gain, damp = _rates(s)
    u = s.u.copy()
    norm0 = float(np.sqrt(np.sum(u**2)))
    with np.errstate(over="ignore", invalid="ignore"):
        traj = _integrate_loop(
            s, T, dt, u, gain, damp, norm0, adaptive, rtol, atol, dt_min,
            proxy_order, proxy_threshold, record_every, stop_on_decay,
        )
    if raise_on_underflow and traj.reason == "step-underflow":
        raise StepUnderflow(f"step size fell below {dt_min:g} at t={traj.times[-1]:g}")
    return traj


def _integrate_loop(
    s, T, dt, u, gain, damp, norm0, adaptive, rtol, atol, dt_min,
    proxy_order, proxy_threshold, record_every, stop_on_decay,
) -> ShellTrajectory:
    """Adaptive RK4 loop behind :func:`integrate`."""
    t = 0.0
    times, us = [0.0], [u.copy()]
    next_record = record_every if record_every else None
    h = dt
    blowup = False
    reason = "completed"
    rejected = accepted = 0
    while t < T * (1 - 1e-14):
        step = min(h, T - t)
        full = _rk4_step(u, step, gain, damp, s.nonlinear)
        if adaptive:
            half = _rk4_step(u, 0.5 * step, gain, damp, s.nonlinear)
            half = _rk4_step(half, 0.5 * step, gain, damp, s.nonlinear)
            size = max(float(np.max(np.abs(half))), float(np.max(np.abs(u))))
            err = float(np.max(np.abs(half - full))) / 15.0 / (atol + rtol * size)
            if not np.all(np.isfinite(half)) or err > 1.0:
                rejected += 1
                h = 0.5 * step
                if h < dt_min:
                    blowup = True
                    reason = "step-underflow"
                    logger.info("step size underflow at t=%g", t)
                    break
                continue
            new = half + (half - full) / 15.0
            if err < 1.0 / 64.0:
                h = min(dt, 2.0 * step)
        else:
            new = full
            if not np.all(np.isfinite(new)):
                blowup = True
                reason = "non-finite"
                break
        u = new
        t += step
        accepted += 1
        if record_every is None or t >= next_record * (1 - 1e-12) or t >= T * (1 - 1e-14):
            times.append(t)
            us.append(u.copy())
            if record_every:
                while next_record <= t * (1 + 1e-12):
                    next_record += record_every
        if proxy_threshold is not None and sobolev_proxy(s.with_u(u), proxy_order) > proxy_threshold:
            blowup = True
            reason = "proxy-threshold"
            if times[-1] != t:
                times.append(t)
                us.append(u.copy())
            break
        if stop_on_decay and norm0 > 0 and np.sqrt(np.sum(u**2)) < 1e-6 * norm0:
            reason = "decayed"
            if times[-1] != t:
                times.append(t)
                us.append(u.copy())
            break
    U = np.array(us)
    E = np.sum(U**2, axis=1)
    n = s.shells.astype(float)
    P = np.sqrt(np.sum((1.0 + s.lam ** (2.0 * proxy_order * n)) * U**2, axis=1))
    norms = np.sqrt(E)
    decay = bool(
        not blowup
        and len(norms) > 1
        and np.all(np.diff(norms) <= 0)
        and norms[-1] < 1e-6 * norms[0]
    )
    top = float(np.max(np.abs(U[:, -1])))
    if top > 0:
        logger.info("energy reached the top shell: max |u_top| = %.3e", top)
    return ShellTrajectory(
        np.array(times), U, E, P, proxy_order, blowup, decay, reason, top, rejected, accepted
    )


# ---------------------------------------------------------------------------
# wavelet-coefficient cascade system


@dataclass(frozen=True)
class CascadeDiagnostics:
    """Wavelet coefficients ``X[i-1, n-n_min]`` and band energies ``E``."""

    n_min: int
    X: np.ndarray
    E: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def nscales(self) -> int:
        return self.X.shape[1]

    def sobolev_proxy(self, order: float, eps0: float) -> float:
        n = np.arange(self.n_min, self.n_min + self.nscales, dtype=float)
        w = 1.0 + (1.0 + eps0) ** (2.0 * order * n)
        return float(np.sqrt(np.sum(w[None, :] * self.X**2)))


def dissipation_coefficients(
    n_min: int, nscales: int, eps0: float, position: float = 0.0
) -> np.ndarray:
    """Per-scale damping between the band's inner and outer radius.

    ``position = 0`` gives the inner-radius value ``4 pi^2 lambda^(2n)``,
    ``position = 1`` the outer value ``4 pi^2 lambda^(2n) (1 + eps0/2)^2``.
    """
    if not 0.0 <= position <= 1.0:
        raise ValueError("position must lie in [0, 1]")
    n = np.arange(n_min, n_min + nscales, dtype=float)
    lam = 1.0 + eps0
    return 4.0 * math.pi**2 * lam ** (2.0 * n) * (1.0 + eps0 / 2.0) ** (2.0 * position)


def cascade_rhs(
    d: CascadeDiagnostics,
    constants: StructureConstants,
    eps0: float,
    *,
    dissipation: np.ndarray | float | None = 0.0,
    check: bool = True,
) -> np.ndarray:
    """``dX_{i,n}/dt`` from the quadratic couplings minus ``c_{i,n} X_{i,n}``.

    The quadratic part is
    ``sum alpha(i1,i2,i,mu) lambda^(5(n-mu3)/2) X_{i1,n-mu3+mu1} X_{i2,n-mu3+mu2}``.
    ``dissipation`` is either an array broadcastable to ``X`` or a position
    in ``[0, 1]`` passed to :func:`dissipation_coefficients`; ``None`` turns
    damping off.
    """
    if check and not validate(constants).ok:
        raise ValueError("structure constants violate symmetry or cancellation")
    if constants.m != d.m:
        raise ValueError("ball count mismatch")
    X = np.asarray(d.X, dtype=float)
    lam = 1.0 + eps0
    nsc = d.nscales
    out = np.zeros_like(X)

    def get(i, n):
        j = n - d.n_min
        return X[i - 1, j] if 0 <= j < nsc else 0.0

    for key, a in constants.entries.items():
        i1, i2, i3, m1, m2, m3 = key
        for j in range(nsc):
            n = d.n_min + j
            base = n - m3
            out[i3 - 1, j] += a * lam ** (2.5 * base) * get(i1, base + m1) * get(i2, base + m2)
    if dissipation is None:
        return out
    if np.isscalar(dissipation):
        c = dissipation_coefficients(d.n_min, nsc, eps0, float(dissipation))
    else:
        c = np.asarray(dissipation, dtype=float)
    return out - c * X


@dataclass(frozen=True)
class LemmaReport:
    weighted_sup: np.ndarray
    lower_margin: float
    upper_margin: float
    upper_constant: float
    below_n0_max: float
    initial_gap: float
    ok: bool

    def as_dict(self) -> dict:
        return {
            "weighted_sup": self.weighted_sup.tolist(),
            "lower_margin": self.lower_margin,
            "upper_margin": self.upper_margin,
            "upper_constant": self.upper_constant,
            "below_n0_max": self.below_n0_max,
            "initial_gap": self.initial_gap,
            "ok": self.ok,
        }


def lemma_bounds_check(
    times: np.ndarray,
    X: np.ndarray,
    E: np.ndarray,
    *,
    n_min: int,
    n0: int,
    eps0: float,
    tol: float = 1e-10,
) -> LemmaReport:
    """Check the coefficient bounds along a spectral trajectory.

    ``X`` and ``E`` have shape ``(T, m, nscales)``. Verified quantities:

    * ``max_t (1 + lambda^(10n)) |X_{i,n}(t)|`` is finite;
    * ``X^2/2 <= E`` at every time (Cauchy-Schwarz);
    * ``E <= X^2/2 + (E(0) - X(0)^2/2) + K lambda^(2n) int_0^t E`` with
      ``K = 8 pi^2 (1 + eps0/2)^2``, the constant coming from
      ``|<Delta u_{i,n}, psi>| <= 4 pi^2 lambda^(2n) (1+eps0/2)^2 ||u_{i,n}||``;
    * ``X`` and ``E`` vanish below scale ``n0``.
    """
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    E = np.asarray(E, dtype=float)
    lam = 1.0 + eps0
    n = np.arange(n_min, n_min + X.shape[2], dtype=float)
    weighted = np.max((1.0 + lam ** (10.0 * n))[None, None, :] * np.abs(X), axis=0)
    scale = max(float(np.max(E)), 1e-300)
    lower = float(np.min(E - 0.5 * X**2)) / scale
    K = 8.0 * math.pi**2 * (1.0 + eps0 / 2.0) ** 2
    integral = np.zeros_like(E)
    if len(times) > 1:
        dt = np.diff(times)[:, None, None]
        integral[1:] = np.cumsum(0.5 * dt * (E[1:] + E[:-1]), axis=0)
    gap0 = E[0] - 0.5 * X[0] ** 2
    bound = 0.5 * X**2 + gap0[None] + K * lam ** (2.0 * n)[None, None, :] * integral
    upper = float(np.min(bound - E)) / scale
    below = n < n0
    below_max = float(np.max(np.abs(X[:, :, below]), initial=0.0))
    below_max = max(below_max, float(np.max(np.abs(E[:, :, below]), initial=0.0)))
    ok = (
        bool(np.all(np.isfinite(weighted)))
        and lower >= -tol
        and upper >= -tol
        and below_max <= tol
    )
    return LemmaReport(weighted, lower, upper, K, below_max, float(np.max(np.abs(gap0))), ok)
