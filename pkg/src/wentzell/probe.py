"""Interior smoothness probes of computed solutions.

The central statistic compares the squared sup of a derivative over an
interior cylinder with time-integrated localized Sobolev norms of the data
and of the solution itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Cutoff
from .grid import derivative, sobolev_norm
from .pde import Trajectory

__all__ = ["ProbeWindow", "minimal_sobolev_order", "sup_derivative", "bound_ratio", "time_cutoff", "MIN_SAMPLES"]

MIN_SAMPLES = 20


def minimal_sobolev_order(d: int, alpha) -> int:
    """Smallest integer ``l`` with ``2 (l - |alpha| - 2) > d + 1``."""
    a = sum(alpha)
    return int(math.floor((d + 1) / 2 + a + 2)) + 1


@dataclass(frozen=True)
class ProbeWindow:
    s0: float
    t0: float
    r: float
    alphas: tuple
    l: int
    d: int

    def __post_init__(self):
        if not self.s0 < self.t0:
            raise ValueError("need s0 < t0")
        if self.r <= 0:
            raise ValueError("radius must be positive")
        for a in self.alphas:
            if len(a) != self.d:
                raise ValueError(f"multi-index {a} does not have {self.d} entries")
            if not 2 * (self.l - sum(a) - 2) > self.d + 1:
                raise ValueError(f"Sobolev order l={self.l} too small for alpha={a} in d={self.d}")

    def enlarged(self, ds: float = 0.0, dt: float = 0.0, dr: float = 0.0) -> "ProbeWindow":
        return ProbeWindow(self.s0 - ds, self.t0 + dt, self.r + dr, self.alphas, self.l, self.d)


def _window_indices(traj: Trajectory, window: ProbeWindow) -> np.ndarray:
    tol = 1e-9 * max(1.0, abs(window.t0))
    if window.s0 < traj.times[0] - tol or window.t0 > traj.times[-1] + tol:
        raise ValueError("window is not covered by the trajectory")
    idx = np.nonzero((traj.times >= window.s0 - tol) & (traj.times <= window.t0 + tol))[0]
    if len(idx) < MIN_SAMPLES:
        raise ValueError(f"only {len(idx)} stored times in the window, need {MIN_SAMPLES}")
    return idx


def sup_derivative(traj: Trajectory, window: ProbeWindow) -> dict:
    """``alpha -> max |D^alpha u_t(x)|`` over stored ``t`` in the window and ``|x| <= r``."""
    idx = _window_indices(traj, window)
    ball = traj.grid.radius() <= window.r * (1 + 1e-12)
    out = {}
    for a in window.alphas:
        best = 0.0
        for k in idx:
            du = derivative(traj.values[k], a, traj.grid.h)
            best = max(best, float(np.abs(du[ball]).max()))
        out[tuple(a)] = best
    return out


def _smooth_step(s):
    """0 for s <= 0, 1 for s >= 1, smooth in between."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    out = np.where(s >= 1.0, 1.0, 0.0)
    mid = (s > 0) & (s < 1)
    a = np.exp(-1.0 / s[mid])
    b = np.exp(-1.0 / (1.0 - s[mid]))
    out[mid] = a / (a + b)
    return out


def time_cutoff(times, S: float, T: float, s0: float, t0: float) -> np.ndarray:
    """Smooth ``eta(t)``: zero near ``S`` and ``T``, one on a neighbourhood of ``[s0, t0]``."""
    times = np.asarray(times, dtype=float)
    a, b = S, S + 0.5 * (s0 - S)
    c, e = t0 + 0.5 * (T - t0), T
    up = _smooth_step((times - a) / (b - a)) if b > a else np.ones_like(times)
    down = _smooth_step((e - times) / (e - c)) if e > c else np.ones_like(times)
    return up * down


def bound_ratio(
    traj: Trajectory,
    window: ProbeWindow,
    m: float,
    R0: float,
    f=None,
    l: int | None = None,
) -> dict:
    """``alpha -> sup |D^alpha u|^2 / int (||f zeta||_{H^l}^2 + ||u zeta||_{H^m}^2) dt``.

    ``zeta(t, x) = eta(t) zeta_x(x)`` where ``zeta_x`` is the radial smooth step
    equal to one on a ball strictly larger than ``B_r`` and vanishing outside
    ``B_{R0}``; the integral runs over the stored times by the trapezoid rule.
    ``f`` is ``None`` (no forcing), a callable ``f(points, t)`` or a trajectory.
    """
    if not window.r < R0:
        raise ValueError("window radius must be below R0")
    l = window.l if l is None else l
    grid = traj.grid
    inner = window.r + 0.25 * (R0 - window.r)
    zx = Cutoff(inner, R0)(grid.points())
    eta = time_cutoff(traj.times, traj.times[0], traj.times[-1], window.s0, window.t0)
    pts = grid.points()
    dens = np.zeros(len(traj.times))
    for k, t in enumerate(traj.times):
        if eta[k] == 0.0:
            continue
        z = eta[k] * zx
        val = sobolev_norm(traj.values[k] * z, m, grid) ** 2
        if f is not None:
            fv = f.values[k] if isinstance(f, Trajectory) else np.asarray(f(pts, t), dtype=float)
            val += sobolev_norm(fv * z, l, grid) ** 2
        dens[k] = val
    denom = float(np.trapezoid(dens, traj.times)) if hasattr(np, "trapezoid") else float(np.trapz(dens, traj.times))
    if not denom > 0:
        raise ZeroDivisionError("bound_ratio denominator vanishes (degenerate run)")
    sups = sup_derivative(traj, window)
    return {a: s * s / denom for a, s in sups.items()}
