"""Finite-difference solvers for the model SPDE and its Wentzell reduction.

The model equation is

    du = (L u + c u + f) dt + (L_{sigma^k} u + nu^k u + g^k) dw^k,
    L  = 1/2 sum_{k=1}^{d1+d2} L_{sigma^k}^2 + L_{sigma^0},

on a periodic lattice.  Second-order parts are always assembled by composing
the first-order difference operator with itself, never expanded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab

from .errors import NumericalAbort, ValidationError
from .fields import ScalarField, VectorFieldSet, solve_small
from .flow import DET_FLOOR, BrownianPath, FlowStepper, FlowState
from .grid import Grid, GridField, derivative, gradient, interpolate, sobolev_norm

__all__ = [
    "SpdeProblem",
    "Trajectory",
    "solve_direct",
    "solve_reduced",
    "ito_wentzell_residual",
    "derivative",
    "sobolev_norm",
    "relative_l2_gap",
    "norm_ledger",
    "write_trajectory",
    "read_trajectory",
]

TRAJ_MAGIC = b"WFLD"
TRAJ_VERSION = 1
_HEADER = struct.Struct("<4sIIQI")
GROWTH_LIMIT = 10.0
BOUNDARY_ABORT = 1e-8


@dataclass
class SpdeProblem:
    fields: VectorFieldSet
    grid: Grid
    u0: object  # ScalarField, expression text, or lattice samples
    T: float
    dt: float
    semi_implicit: bool = True
    output_every: int | None = None  # steps; None keeps only t=0 and t=T
    solver_rtol: float = 1e-10

    def __post_init__(self):
        if self.grid.dim != self.fields.d:
            raise ValidationError("grid and fields disagree on dimension", "grid")
        if isinstance(self.u0, str):
            self.u0 = ScalarField(self.u0, self.fields.d, None, "u0")

    @property
    def steps(self) -> int:
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-9 * max(1.0, m):
            raise ValidationError(f"dt={self.dt} does not divide T={self.T}", "grid.dt")
        return int(round(m))

    def initial(self) -> np.ndarray:
        if isinstance(self.u0, np.ndarray):
            if self.u0.shape != self.grid.shape:
                raise ValidationError("initial samples do not match the grid", "fields.u0")
            return self.u0.astype(float).copy()
        return np.asarray(self.u0(self.grid.points(), 0.0), dtype=float)

    def output_steps(self) -> set:
        if self.output_every is None:
            return {0, self.steps}
        return set(range(0, self.steps + 1, self.output_every)) | {self.steps}


@dataclass
class Trajectory:
    grid: Grid
    times: np.ndarray
    values: np.ndarray  # (nt, *grid.shape)
    info: dict = field(default_factory=dict)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} not stored")
        return k

    def at(self, t: float) -> GridField:
        return GridField(self.grid, self.values[self.index(t)])

    @property
    def final(self) -> GridField:
        return GridField(self.grid, self.values[-1])

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.grid, self.times, self.values * factor, dict(self.info))


# ---------------------------------------------------------------------------
# lattice operators


def _L(sig: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """``sigma^i D_i u`` for ``sig`` of shape ``(d, *shape)``."""
    out = np.zeros_like(u)
    for i in range(sig.shape[0]):
        s = sig[i]
        if np.any(s):
            out += s * derivative(u, tuple(int(j == i) for j in range(u.ndim)), h)
    return out


def _sum_of_squares(sigs, u, h):
    """``1/2 sum_k L_k L_k u``."""
    out = np.zeros_like(u)
    for s in sigs:
        out += _L(s, _L(s, u, h), h)
    return 0.5 * out


def _d1_symbol(grid: Grid):
    # the first-derivative stencil acts on e^{i xi x} as i * sym(xi)
    h = grid.h
    return [
        (8 * np.sin(k * h) - np.sin(2 * k * h)) / (6 * h)
        for k in np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n, h) for n in grid.shape], indexing="ij")
    ]


class _ImplicitSolver:
    """Solves ``(I - dt * 1/2 sum_k L_k^2) v = rhs`` on the nodes the fields touch."""

    def __init__(self, grid: Grid, rtol: float):
        self.grid = grid
        self.rtol = rtol
        self.sym = _d1_symbol(grid)
        self.iterations = []

    def solve(self, sigs, dt: float, rhs: np.ndarray) -> np.ndarray:
        sigs = [s for s in sigs if np.any(s)]
        if not sigs or dt == 0:
            return rhs.copy()
        h = self.grid.h
        active = np.zeros(self.grid.shape, dtype=bool)
        for s in sigs:
            active |= np.any(s != 0, axis=0)
        n_act = int(active.sum())
        # inactive nodes are fixed to rhs; move their coupling to the right side
        fixed = np.where(active, 0.0, rhs)
        b = rhs[active] + dt * _sum_of_squares(sigs, fixed, h)[active]
        buf = np.zeros(self.grid.shape)

        def matvec(v):
            buf[...] = 0.0
            buf[active] = v
            return v - dt * _sum_of_squares(sigs, buf, h)[active]

        # constant-coefficient spectral preconditioner with the mean diffusion
        d = self.grid.dim
        mean_a = np.zeros((d, d))
        for s in sigs:
            sa = s[:, active]
            mean_a += 0.5 * np.einsum("ip,jp->ij", sa, sa) / max(n_act, 1)
        symbol = np.ones(self.grid.shape)
        for i in range(d):
            for j in range(d):
                symbol += dt * mean_a[i, j] * self.sym[i] * self.sym[j]
        inv_symbol = 1.0 / symbol
        pbuf = np.zeros(self.grid.shape)

        def precond(v):
            pbuf[...] = 0.0
            pbuf[active] = v
            return np.real(np.fft.ifftn(np.fft.fftn(pbuf) * inv_symbol))[active]

        A = LinearOperator((n_act, n_act), matvec=matvec, dtype=float)
        Mp = LinearOperator((n_act, n_act), matvec=precond, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = bicgstab(A, b, x0=rhs[active], rtol=self.rtol, atol=0.0, M=Mp, maxiter=500, callback=cb)
        if info != 0:
            raise NumericalAbort(f"implicit solve did not converge (info={info})")
        self.iterations.append(count[0])
        out = rhs.copy()
        out[active] = x
        return out


class _Coefficients:
    """Lattice samples of all coefficients, cached when time independent."""

    def __init__(self, fields: VectorFieldSet, grid: Grid):
        self.fields = fields
        self.grid = grid
        self.pts = grid.points()
        items = list(fields.sigma) + [fields.c, fields.f] + list(fields.nu) + list(fields.g)
        self.static = not any(getattr(it, "time_dependent", True) for it in items)
        self._cache = None

    def __call__(self, t: float):
        if self.static and self._cache is not None:
            return self._cache
        fs = self.fields
        sig = [np.moveaxis(s(self.pts, t), -1, 0) for s in fs.sigma]
        out = {
            "sigma": sig,
            "c": fs.c(self.pts, t),
            "f": fs.f(self.pts, t),
            "nu": [v(self.pts, t) for v in fs.nu],
            "g": [v(self.pts, t) for v in fs.g],
        }
        if self.static:
            self._cache = out
        return out


def _norm(u):
    return float(np.sqrt(np.sum(u * u)))


def _check_growth(old, new, m, t):
    if not np.all(np.isfinite(new)):
        raise NumericalAbort("solution became nonfinite", m, t)
    n0, n1 = _norm(old), _norm(new)
    if n1 > GROWTH_LIMIT * max(n0, 1e-300) and n1 > 1e-12:
        raise NumericalAbort(f"norm grew by {n1 / n0:.3g} in one step", m, t)


# ---------------------------------------------------------------------------
# direct solver


def solve_direct(problem: SpdeProblem, path: BrownianPath, record_all: bool = False) -> Trajectory:
    """Euler-Maruyama in time, fourth-order differences in space.

    With ``semi_implicit`` the pure second-order part is taken at the new time
    level; drift, zeroth-order and stochastic terms stay explicit.
    """
    fs = problem.fields
    grid = problem.grid
    h = grid.h
    if path.d1 != fs.d1:
        raise ValidationError(f"path has {path.d1} components, scenario needs {fs.d1}", "scenario.d1")
    if not math.isclose(path.dt, problem.dt, rel_tol=1e-12):
        raise ValidationError("path step differs from problem step", "grid.dt")
    coef = _Coefficients(fs, grid)
    solver = _ImplicitSolver(grid, problem.solver_rtol)
    u = problem.initial()
    bmask = grid.boundary_mask()
    # wraparound must stay inert; the largest boundary sample is reported and a
    # run whose boundary level reaches BOUNDARY_ABORT of the peak is stopped
    scale = max(1.0, float(np.abs(u).max()))
    boundary_limit = BOUNDARY_ABORT * scale + float(np.abs(u[bmask]).max())
    boundary_max = float(np.abs(u[bmask]).max())
    wanted = set(range(problem.steps + 1)) if record_all else problem.output_steps()
    times, values = [0.0], [u.copy()]
    dt = problem.dt
    for m in range(problem.steps):
        t = m * dt
        cf = coef(t)
        sig = cf["sigma"]
        second = sig[1:]
        rhs = u + dt * (_L(sig[0], u, h) + cf["c"] * u + cf["f"])
        for k in range(fs.d1):
            dw = path.increments[m, k]
            rhs = rhs + dw * (_L(sig[1 + k], u, h) + cf["nu"][k] * u + cf["g"][k])
        if problem.semi_implicit:
            new = solver.solve(second, dt, rhs)
        else:
            new = rhs + dt * _sum_of_squares(second, u, h)
        _check_growth(u, new, m + 1, t + dt)
        if fs.cutoff is not None:
            bnow = float(np.max(np.abs(new[bmask])))
            boundary_max = max(boundary_max, bnow)
            if bnow > boundary_limit:
                raise NumericalAbort("solution reached the periodic box boundary", m + 1, t + dt)
        u = new
        if m + 1 in wanted:
            times.append((m + 1) * dt)
            values.append(u.copy())
    info = {"method": "direct", "solver_iterations": solver.iterations, "boundary_max": boundary_max}
    return Trajectory(grid, np.array(times), np.array(values), info)


# ---------------------------------------------------------------------------
# reduced solver


def solve_reduced(problem: SpdeProblem, path: BrownianPath, min_singular: float = DET_FLOOR) -> Trajectory:
    """Integrate the deterministic equation for ``u_hat(t, x) = u(t, X_t(x))``.

    ``d u_hat = [1/2 sum_k L^2_{bar sigma^{d1+k}} u_hat + c_hat u_hat + f_hat] dt``
    along the same path, with the flow advanced in lockstep on the lattice and
    barred fields, ``c_hat`` and ``f_hat`` frozen at the start of each step.
    Outputs are pushed forward to physical coordinates.
    """
    fs = problem.fields
    grid = problem.grid
    h = grid.h
    d = fs.d
    if not fs.nu_g_vanish:
        raise ValidationError("the reduced solver needs nu = g = 0", "fields.nu")
    if path.d1 != fs.d1:
        raise ValidationError(f"path has {path.d1} components, scenario needs {fs.d1}", "scenario.d1")
    pts = grid.flat_points()
    stepper = FlowStepper(fs, pts, path.increments, path.dt)
    solver = _ImplicitSolver(grid, problem.solver_rtol)
    uhat = problem.initial()
    wanted = problem.output_steps()
    dt = problem.dt
    times, values = [0.0], [uhat.copy()]
    smin_seen = 1.0
    for m in range(problem.steps):
        t = m * dt
        X = stepper.X
        DX = stepper.DX
        det = DX[:, 0, 0] * DX[:, 1, 1] - DX[:, 0, 1] * DX[:, 1, 0] if d == 2 else np.linalg.det(DX)
        if np.any(det <= DET_FLOOR):
            raise NumericalAbort("flow Jacobian degenerated", m, t)
        bars = []
        for s in fs.diffusion:
            sv = s(X, t)
            bars.append(np.moveaxis(solve_small(DX, sv), -1, 0).reshape((d,) + grid.shape))
        chat = fs.c(X, t).reshape(grid.shape)
        fhat = fs.f(X, t).reshape(grid.shape)
        rhs = uhat + dt * (chat * uhat + fhat)
        new = solver.solve(bars, dt, rhs)
        _check_growth(uhat, new, m + 1, t + dt)
        uhat = new
        stepper.step()
        if m + 1 in wanted:
            smin = float(np.linalg.svd(stepper.DX, compute_uv=False).min())
            smin_seen = min(smin_seen, smin)
            if smin <= min_singular:
                raise NumericalAbort(f"smallest singular value {smin:.3g} below threshold", m + 1, t + dt)
            times.append((m + 1) * dt)
            values.append(_push_forward(uhat, stepper, grid))
    info = {"method": "reduced", "solver_iterations": solver.iterations, "min_singular_value": smin_seen}
    return Trajectory(grid, np.array(times), np.array(values), info)


def _push_forward(uhat: np.ndarray, stepper: FlowStepper, grid: Grid) -> np.ndarray:
    state = FlowState(
        stepper.fields,
        stepper.increments,
        stepper.dt,
        grid.flat_points(),
        np.array([stepper.m]),
        stepper.X[None].copy(),
        stepper.DX[None].copy(),
        stepper.I[None].copy(),
        stepper.J[None].copy(),
        grid,
    )
    xinv = state.lattice_inverse(stepper.t)
    return interpolate(uhat, grid, xinv)


# ---------------------------------------------------------------------------
# Ito-Wentzell residual


def _transformed_terms(fs: VectorFieldSet, u: np.ndarray, grid: Grid, t: float, cf):
    """Drift ``F`` and diffusions ``G^k`` of ``u(t, X_t)`` written at ``x = X_t``.

    F = L u + c u + f + a^{ij} D_ij u - b.Du - sigma^{ik} D_i(L_{sigma^k} u + nu^k u + g^k)
    G^k = L_{sigma^k} u + nu^k u + g^k - sigma^k.Du
    """
    h = grid.h
    d = fs.d
    sig = cf["sigma"]
    Lu = _sum_of_squares(sig[1:], u, h) + _L(sig[0], u, h)
    F = Lu + cf["c"] * u + cf["f"]
    du = gradient(u, h)
    G = []
    _, _, b, _ = fs.flow_coefficients(grid.flat_points(), t)
    b = np.moveaxis(b.reshape(grid.shape + (d,)), -1, 0)
    F = F - np.sum(b * du, axis=0)
    for k in range(fs.d1):
        s = sig[1 + k]
        for i in range(d):
            for j in range(d):
                alpha = [0] * d
                alpha[i] += 1
                alpha[j] += 1
                F = F + 0.5 * s[i] * s[j] * derivative(u, tuple(alpha), h)
        g0 = _L(s, u, h) + cf["nu"][k] * u + cf["g"][k]
        F = F - np.sum(s * gradient(g0, h), axis=0)
        G.append(g0 - np.sum(s * du, axis=0))
    return F, G


def ito_wentzell_residual(traj: Trajectory, path: BrownianPath, fields: VectorFieldSet, tests) -> np.ndarray:
    """Residual of the integrated pairing identity for each test function.

    For ``phi`` in ``tests`` (callables of points) the pairing
    ``(u_t(X_t), phi)`` is computed by lattice quadrature over the support of
    ``phi`` with ``u_t`` interpolated at the flowed nodes; the residual is

        P_T - P_0 - sum_m (F_m(X_m), phi) dt - sum_m (G^k_m(X_m), phi) dw^k_m.

    ``traj`` must hold every time step of ``path``.
    """
    grid = traj.grid
    M = path.steps
    if len(traj.times) != M + 1:
        raise ValueError("trajectory must store every step of the path")
    pts = grid.flat_points()
    phis = np.stack([np.asarray(phi(pts), dtype=float) for phi in tests])
    support = np.any(phis != 0, axis=0)
    nodes = pts[support]
    weights = phis[:, support] * grid.cell_volume
    stepper = FlowStepper(fields, nodes, path.increments, path.dt)
    coef = _Coefficients(fields, grid)

    def pair(vals, X):
        return weights @ interpolate(vals, grid, X)

    start = pair(traj.values[0], stepper.X)
    acc = np.zeros(len(tests))
    for m in range(M):
        t = m * path.dt
        F, G = _transformed_terms(fields, traj.values[m], grid, t, coef(t))
        acc += pair(F, stepper.X) * path.dt
        for k, gk in enumerate(G):
            acc += pair(gk, stepper.X) * path.increments[m, k]
        stepper.step()
    end = pair(traj.values[M], stepper.X)
    return end - start - acc


# ---------------------------------------------------------------------------
# diagnostics and export


def relative_l2_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((a - b) ** 2) / np.sum(a * a)))


NORM_ORDERS = (0, 1, 2, 4, 5)


def norm_ledger(traj: Trajectory, orders=NORM_ORDERS) -> list[tuple]:
    """Rows ``(t, ||u||_{H^m} for m in orders, min u, max u)``."""
    rows = []
    for t, u in zip(traj.times, traj.values):
        rows.append((float(t), *[sobolev_norm(u, m, traj.grid) for m in orders], float(u.min()), float(u.max())))
    return rows


def write_trajectory(traj: Trajectory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRAJ_MAGIC, TRAJ_VERSION, traj.grid.dim, traj.grid.size, len(traj.times)))
        fh.write(np.ascontiguousarray(traj.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())


def read_trajectory(path, grid: Grid) -> Trajectory:
    with open(path, "rb") as fh:
        magic, version, d, n, nt = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != TRAJ_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if d != grid.dim or n != grid.size:
            raise ValueError("trajectory does not match the grid")
        raw = np.frombuffer(fh.read(), dtype="<f8")
    times = raw[:nt].copy()
    values = raw[nt:].reshape((nt,) + grid.shape).copy()
    return Trajectory(grid, times, values)
