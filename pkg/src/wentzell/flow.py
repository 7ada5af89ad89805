"""Stochastic flow of the characteristic equation, its Jacobian and its inverse.

The flow solves ``dX = -sigma^k(X) dw^k - b(X) dt`` (Ito form, summation over
the noise fields) and is discretised by Euler-Maruyama.  The Jacobian is
propagated with the linearised step, which makes it the exact Jacobian of the
discrete map.  Alongside, the stochastic and Lebesgue integrals entering the
closed-form Jacobian determinant are accumulated.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InversionError, NumericalAbort
from .fields import VectorFieldSet
from .grid import Grid, interpolate

__all__ = [
    "BrownianPath",
    "sample_path",
    "FlowStepper",
    "FlowState",
    "integrate_flow",
    "integrate_flow_ensemble",
    "det_via_formula",
    "invert",
    "rho",
    "min_singular_value",
    "write_snapshot",
    "read_snapshot",
    "flow_summary",
    "DET_FLOOR",
]

DET_FLOOR = 1e-10
SNAPSHOT_MAGIC = b"WFLW"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIQI")


# ---------------------------------------------------------------------------
# Brownian paths


def _steps(T: float, dt: float) -> int:
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    m = T / dt
    if abs(m - round(m)) > 1e-9 * max(1.0, m):
        raise ValueError(f"dt={dt} does not divide T={T}")
    return int(round(m))


@dataclass(frozen=True)
class BrownianPath:
    """Wiener increments ``dw[m, k]`` on the uniform grid ``t_m = m * dt``."""

    seed: int
    d1: int
    T: float
    dt: float
    increments: np.ndarray
    level: int = 0

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    @property
    def w(self) -> np.ndarray:
        """Path values ``w[m, k]`` at the grid times, ``w[0] = 0``."""
        out = np.zeros((self.steps + 1, self.d1))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def refine(self, times: int = 1) -> "BrownianPath":
        """Halve the step by Brownian-bridge splitting, ``times`` times.

        Each coarse increment is split into two that sum to it up to one ulp of the larger half,
        so the refined path passes through the same values.
        """
        path = self
        for _ in range(times):
            path = path._refine_once()
        return path

    def _refine_once(self) -> "BrownianPath":
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.level + 1,))
        z = np.random.default_rng(seq).standard_normal(self.increments.shape)
        coarse = self.increments
        first = 0.5 * coarse + math.sqrt(self.dt / 4.0) * z
        second = coarse - first
        # one residual correction; what remains is below one ulp of the halves
        second = second + (coarse - (first + second))
        fine = np.empty((2 * self.steps, self.d1))
        fine[0::2] = first
        fine[1::2] = second
        return BrownianPath(self.seed, self.d1, self.T, self.dt / 2.0, fine, self.level + 1)


def sample_path(seed: int, d1: int, T: float, dt: float) -> BrownianPath:
    """Reproducible ``d1``-dimensional Wiener increments with variance ``dt``."""
    m = _steps(T, dt)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    inc = rng.standard_normal((m, d1)) * math.sqrt(dt)
    return BrownianPath(int(seed), int(d1), float(T), float(dt), inc, 0)


# ---------------------------------------------------------------------------
# Euler-Maruyama stepper


class FlowStepper:
    """Advances ``X``, ``DX`` and the determinant integrals one step at a time.

    ``increments`` has shape ``(M, d1)`` (one path shared by all points) or
    ``(M, d1, P)`` (a separate path per point, used for seed ensembles).
    """

    def __init__(
        self,
        fields: VectorFieldSet,
        points: np.ndarray,
        increments: np.ndarray,
        dt: float,
        start_step: int = 0,
        X0: np.ndarray | None = None,
        DX0: np.ndarray | None = None,
    ):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != fields.d:
            raise ValueError(f"points must have shape (P, {fields.d})")
        self.fields = fields
        self.dt = float(dt)
        self.increments = np.asarray(increments, dtype=float)
        self.m = int(start_step)
        self.X = pts.copy() if X0 is None else np.array(X0, dtype=float)
        P, d = self.X.shape
        self.DX = np.broadcast_to(np.eye(d), (P, d, d)).copy() if DX0 is None else np.array(DX0, dtype=float)
        self.I = np.zeros(P)
        self.J = np.zeros(P)
        self._support = fields.cutoff.support_radius if fields.cutoff is not None else None

    @property
    def t(self) -> float:
        return self.m * self.dt

    def step(self):
        fs = self.fields
        dw = self.increments[self.m]
        if dw.ndim == 1:
            dw = dw[:, None]
        X = self.X
        if self._support is not None:
            act = np.einsum("pi,pi->p", X, X) < self._support ** 2
            idx = np.nonzero(act)[0]
        else:
            idx = slice(None)
        Xa = X[idx]
        if Xa.shape[0] == 0:
            self.m += 1
            return
        dwa = dw[:, idx] if dw.shape[1] > 1 else dw
        sig, dsig, b, db = fs.flow_coefficients(Xa, self.t)
        DXa = self.DX[idx]
        move = b * self.dt
        lin = db * self.dt
        trace_sq = np.zeros(Xa.shape[0])
        for k in range(fs.d1):
            move = move + sig[k] * dwa[k][:, None]
            lin = lin + dsig[k] * dwa[k][:, None, None]
            self.I[idx] += np.trace(dsig[k], axis1=1, axis2=2) * dwa[k]
            trace_sq += np.einsum("pij,pji->p", dsig[k], dsig[k])
        self.J[idx] += (np.trace(db, axis1=1, axis2=2) + 0.5 * trace_sq) * self.dt
        self.X[idx] = Xa - move
        self.DX[idx] = DXa - np.einsum("pij,pjk->pik", lin, DXa)
        self.m += 1
        if not (np.all(np.isfinite(self.X[idx])) and np.all(np.isfinite(self.DX[idx]))):
            raise NumericalAbort("flow state became nonfinite", self.m, self.t)


# ---------------------------------------------------------------------------
# flow state


@dataclass
class FlowState:
    """Recorded flow on a point set.

    When built on a lattice the first ``grid.size`` points are the lattice
    nodes in C order; later points are extra query points.
    """

    fields: VectorFieldSet
    increments: np.ndarray
    dt: float
    points: np.ndarray
    steps: np.ndarray
    X: np.ndarray
    DX: np.ndarray
    I: np.ndarray
    J: np.ndarray
    grid: Grid | None = None
    det_floor: float = DET_FLOOR
    _inverse_cache: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} was not recorded")
        return k

    def positions(self, t: float) -> np.ndarray:
        return self.X[self.index(t)]

    def jacobians(self, t: float) -> np.ndarray:
        return self.DX[self.index(t)]

    def det_direct(self, t: float) -> np.ndarray:
        return np.linalg.det(self.jacobians(t))

    def det_formula(self, t: float) -> np.ndarray:
        k = self.index(t)
        return np.exp(-self.I[k] - self.J[k])

    def _lattice(self, arr):
        if self.grid is None:
            raise ValueError("flow was not integrated on a lattice")
        n = self.grid.size
        return arr[:n].reshape(self.grid.shape + arr.shape[1:])

    def lattice_positions(self, t: float) -> np.ndarray:
        return self._lattice(self.positions(t))

    def lattice_jacobians(self, t: float) -> np.ndarray:
        return self._lattice(self.jacobians(t))

    def lattice_inverse(self, t: float) -> np.ndarray:
        """``X_t^{-1}`` at the lattice nodes by interpolation-based Newton."""
        k = self.index(t)
        if k not in self._inverse_cache:
            y = self.grid.flat_points()
            self._inverse_cache[k] = invert_interpolated(self, y, t).reshape(self.grid.shape + (self.d,))
        return self._inverse_cache[k]


def integrate_flow(
    fields: VectorFieldSet,
    path: BrownianPath,
    points=None,
    grid: Grid | None = None,
    record: str | int | Sequence[int] = "all",
    start_step: int = 0,
    stop_step: int | None = None,
    X0=None,
    DX0=None,
) -> FlowState:
    """Euler-Maruyama flow from ``start_step`` to ``stop_step`` of ``path``.

    ``points`` are the initial positions (and ``grid`` nodes are prepended when
    given).  ``record`` is ``"all"``, ``"end"``, a stride, or explicit step
    indices.  ``X0``/``DX0`` restart from a previously computed state.
    """
    if path.d1 != fields.d1:
        raise ValueError(f"path has {path.d1} components, fields need {fields.d1}")
    pts = _collect_points(fields.d, points, grid)
    return _integrate(fields, path.increments, path.dt, pts, grid, record, start_step, stop_step, X0, DX0)


def _collect_points(d, points, grid):
    parts = []
    if grid is not None:
        parts.append(grid.flat_points())
    if points is not None:
        parts.append(np.asarray(points, dtype=float).reshape(-1, d))
    if not parts:
        raise ValueError("need points or a grid")
    return np.concatenate(parts)


def _integrate(fields, increments, dt, pts, grid, record, start_step, stop_step, X0, DX0):
    M = increments.shape[0]
    stop = M if stop_step is None else int(stop_step)
    if not 0 <= start_step <= stop <= M:
        raise ValueError("invalid step range")
    if isinstance(record, str):
        wanted = set(range(start_step, stop + 1)) if record == "all" else {stop}
    elif isinstance(record, (int, np.integer)):
        wanted = set(range(start_step, stop + 1, int(record))) | {stop}
    else:
        wanted = {int(s) for s in record if start_step <= s <= stop}
    stepper = FlowStepper(fields, pts, increments, dt, start_step, X0, DX0)
    steps, Xs, DXs, Is, Js = [], [], [], [], []

    def snap():
        steps.append(stepper.m)
        Xs.append(stepper.X.copy())
        DXs.append(stepper.DX.copy())
        Is.append(stepper.I.copy())
        Js.append(stepper.J.copy())

    if start_step in wanted:
        snap()
    while stepper.m < stop:
        stepper.step()
        if stepper.m in wanted:
            snap()
    return FlowState(
        fields, increments, dt, pts, np.array(steps), np.array(Xs), np.array(DXs), np.array(Is), np.array(Js), grid
    )


def integrate_flow_ensemble(
    fields: VectorFieldSet,
    paths: Sequence[BrownianPath],
    points,
    record: str | int | Sequence[int] = "all",
) -> list[FlowState]:
    """Integrate the same points along several paths in one vectorised pass."""
    pts = np.asarray(points, dtype=float).reshape(-1, fields.d)
    P, S = pts.shape[0], len(paths)
    dts = {p.dt for p in paths}
    if len(dts) != 1 or len({p.steps for p in paths}) != 1:
        raise ValueError("ensemble paths must share the time grid")
    inc = np.stack([p.increments for p in paths], axis=-1)  # (M, d1, S)
    inc = np.repeat(inc, P, axis=-1)  # seed-major point blocks
    allpts = np.tile(pts, (S, 1))
    big = _integrate(fields, inc, paths[0].dt, allpts, None, record, 0, None, None, None)
    out = []
    for s, path in enumerate(paths):
        sl = slice(s * P, (s + 1) * P)
        out.append(
            FlowState(
                fields,
                path.increments,
                path.dt,
                pts,
                big.steps,
                big.X[:, sl],
                big.DX[:, sl],
                big.I[:, sl],
                big.J[:, sl],
            )
        )
    return out


def det_via_formula(state: FlowState, t: float) -> np.ndarray:
    """``exp(-I_t - J_t)`` with ``I = int tr D sigma^k dw^k`` and
    ``J = int [tr Db + 1/2 sum_k tr((D sigma^k)^2)] ds``."""
    return state.det_formula(t)


def min_singular_value(state: FlowState, t: float) -> float:
    DX = state.jacobians(t)
    if state.grid is not None:
        DX = DX[: state.grid.size]
    return float(np.linalg.svd(DX, compute_uv=False).min())


# ---------------------------------------------------------------------------
# inversion


def _reintegrate(state: FlowState, x: np.ndarray, step: int):
    st = _integrate(state.fields, state.increments, state.dt, x, None, "end", 0, step, None, None)
    return st.X[-1], st.DX[-1]


def _identity_radius(state: FlowState) -> float | None:
    cut = state.fields.cutoff
    return None if cut is None else cut.R_cut


def invert(state: FlowState, y, t: float, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Solve ``X_t(x) = y`` by Newton's method on re-integrated trajectories.

    Seeds come from the nearest recorded image point.  Converged when
    ``|X_t(x) - y| <= tol (1 + |y|)``.
    """
    x, _ = _invert_exact(state, y, t, tol, max_iter)
    return x


def _invert_exact(state, y, t, tol=1e-10, max_iter=50):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    k = state.index(t)
    step = int(state.steps[k])
    x = y.copy()
    DXx = np.broadcast_to(np.eye(state.d), y.shape + (state.d,)).copy()
    rad = _identity_radius(state)
    todo = np.ones(len(y), dtype=bool)
    if rad is not None:
        todo &= np.linalg.norm(y, axis=1) < rad
    if step == 0 or not todo.any():
        return x, DXx
    tree = cKDTree(state.X[k])
    _, nearest = tree.query(y[todo])
    xs = state.points[nearest].copy()
    ys = y[todo]
    target = tol * (1.0 + np.linalg.norm(ys, axis=1))
    X, DX = _reintegrate(state, xs, step)
    res = X - ys
    rn = np.linalg.norm(res, axis=1)
    active = rn > target
    for _ in range(max_iter):
        if not active.any():
            break
        ia = np.nonzero(active)[0]
        delta = np.linalg.solve(DX[ia], res[ia][..., None])[..., 0]
        lam = np.ones(len(ia))
        for _ in range(12):
            trial = xs[ia] - lam[:, None] * delta
            Xt, DXt = _reintegrate(state, trial, step)
            rt = np.linalg.norm(Xt - ys[ia], axis=1)
            worse = rt > rn[ia] * (1 - 1e-4 * lam) + target[ia]
            if not worse.any():
                break
            lam = np.where(worse, lam / 2, lam)
        xs[ia], X[ia], DX[ia] = trial, Xt, DXt
        res[ia] = Xt - ys[ia]
        rn[ia] = rt
        active = rn > target
    if active.any():
        raise InversionError("Newton inversion stagnated", float(rn[active].max()))
    x[todo] = xs
    DXx[todo] = DX
    return x, DXx


def invert_interpolated(state: FlowState, y, t: float, tol: float = 1e-12, max_iter: int = 40) -> np.ndarray:
    """Inverse of the cubic-spline interpolant of the lattice flow at ``y``.

    Much cheaper than :func:`invert`; accurate to the interpolation error of
    the displacement ``X_t(x) - x``, which vanishes near the box boundary.
    """
    grid = state.grid
    if grid is None:
        raise ValueError("interpolated inversion needs a lattice flow")
    d = state.d
    y = np.atleast_2d(np.asarray(y, dtype=float))
    disp = state.lattice_positions(t) - grid.points()
    jac = state.lattice_jacobians(t)
    disp_c = [np.ascontiguousarray(disp[..., i]) for i in range(d)]
    jac_c = [[np.ascontiguousarray(jac[..., i, j]) for j in range(d)] for i in range(d)]

    def fmap(x):
        return x + np.stack([interpolate(c, grid, x) for c in disp_c], axis=-1)

    def fjac(x):
        return np.stack([np.stack([interpolate(c, grid, x) for c in row], axis=-1) for row in jac_c], axis=-2)

    x = y.copy()
    res = fmap(x) - y
    for _ in range(max_iter):
        rn = np.linalg.norm(res, axis=1)
        act = rn > tol * (1 + np.linalg.norm(y, axis=1))
        if not act.any():
            break
        ia = np.nonzero(act)[0]
        delta = np.linalg.solve(fjac(x[ia]), res[ia][..., None])[..., 0]
        x[ia] -= delta
        res[ia] = fmap(x[ia]) - y[ia]
    return x


def rho(state: FlowState, y, t: float) -> np.ndarray:
    """``1 / det DX_t(X_t^{-1}(y))``."""
    _, DX = _invert_exact(state, y, t)
    return 1.0 / np.linalg.det(DX)


# ---------------------------------------------------------------------------
# export


def write_snapshot(state: FlowState, path) -> None:
    """Binary container: header, then X, DX and (direct, formula) det pairs."""
    nt, P, d = state.X.shape
    det = np.stack([np.linalg.det(state.DX), np.exp(-state.I - state.J)], axis=-1)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, d, P, nt))
        for arr in (state.X, state.DX, det):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path) -> dict:
    with open(path, "rb") as fh:
        magic, version, d, P, nt = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    sizes = [nt * P * d, nt * P * d * d, nt * P * 2]
    if raw.size != sum(sizes):
        raise ValueError("truncated snapshot")
    a, b = sizes[0], sizes[0] + sizes[1]
    return {
        "version": version,
        "X": raw[:a].reshape(nt, P, d),
        "DX": raw[a:b].reshape(nt, P, d, d),
        "det": raw[b:].reshape(nt, P, 2),
    }


def flow_summary(state: FlowState) -> list[tuple]:
    """Rows ``(t, min det, max det, min singular value, max relative det gap)``."""
    rows = []
    n = state.grid.size if state.grid is not None else state.X.shape[1]
    for k, t in enumerate(state.times):
        DX = state.DX[k, :n]
        dd = np.linalg.det(DX)
        df = np.exp(-state.I[k, :n] - state.J[k, :n])
        smin = np.linalg.svd(DX, compute_uv=False).min()
        rows.append((float(t), float(dd.min()), float(dd.max()), float(smin), float(np.max(np.abs(dd - df) / df))))
    return rows
