"""Experiment drivers shared by the command line and the acceptance suite.

Everything here is a pure function of a scenario and a seed; file output is
left to the caller.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .fields import Cutoff, VectorFieldSet
from .flow import BrownianPath, integrate_flow_ensemble, sample_path
from .grid import Grid
from .hormander import ball_nodes
from .pde import SpdeProblem, Trajectory, ito_wentzell_residual, relative_l2_gap, solve_direct, solve_reduced
from .probe import ProbeWindow, bound_ratio, sup_derivative
from .scenario import Scenario

__all__ = [
    "levels_of",
    "level_paths",
    "spike",
    "bump",
    "problem_for",
    "twin_gaps",
    "det_errors",
    "det_levels",
    "det_points",
    "probe_window",
    "residual_levels",
    "probe_rows",
]


def levels_of(sc: Scenario, key: str = "levels", section: dict | None = None) -> list[tuple[float, float]]:
    """``[(h, dt), ...]`` from coarse to fine; the scenario's own grid when absent."""
    sec = sc.grid_spec if section is None else section
    raw = sec.get(key)
    if raw is None:
        return [(sc.grid().h, sc.dt)]
    name = "grid" if section is None else "residual"
    out = []
    for i, lv in enumerate(raw):
        if not (isinstance(lv, list) and len(lv) == 2 and all(isinstance(v, (int, float)) for v in lv)):
            raise ValidationError("each level must be [h, dt]", f"{name}.{key}[{i}]")
        h, dt = float(lv[0]), float(lv[1])
        if h <= 0 or dt <= 0:
            raise ValidationError("h and dt must be positive", f"{name}.{key}[{i}]")
        out.append((h, dt))
    dt0 = out[0][1]
    for i, (_, dt) in enumerate(out):
        r = math.log2(dt0 / dt)
        if abs(r - round(r)) > 1e-9 or r < 0:
            raise ValidationError("level steps must be dyadic refinements of the first", f"{name}.{key}[{i}]")
    return out


def level_paths(seed: int, d1: int, T: float, levels) -> list[BrownianPath]:
    """One path per level, all bridged from the coarsest so they are nested."""
    dt0 = levels[0][1]
    base = sample_path(seed, d1, T, dt0)
    return [base.refine(int(round(math.log2(dt0 / dt)))) for _, dt in levels]


def spike(grid: Grid, width: float) -> np.ndarray:
    """Unit-mass Gaussian of standard deviation ``width`` centred at the origin."""
    r2 = grid.radius() ** 2
    d = grid.dim
    return np.exp(-r2 / (2 * width * width)) / (2 * math.pi * width * width) ** (d / 2)


def bump(center, radius: float):
    """Smooth test function, one on ``B(center, radius/2)`` and zero outside ``B(center, radius)``."""
    c = np.asarray(center, dtype=float)
    cut = Cutoff(0.5 * radius, radius)
    return lambda pts: cut(np.asarray(pts, dtype=float) - c)


def problem_for(sc: Scenario, h: float, dt: float, output_every: float | None = None) -> SpdeProblem:
    grid = sc.grid(h)
    every = sc.grid_spec.get("output_every") if output_every is None else output_every
    steps = None if every is None else max(1, int(round(every / dt)))
    u0 = sc.u0()
    cells = sc.probe.get("spike_cells")
    if cells is not None and "u0" not in sc.components:
        u0 = spike(grid, cells * grid.h)
    return SpdeProblem(sc.fields(), grid, u0, sc.T, dt, sc.semi_implicit, steps)


def twin_gaps(sc: Scenario, seed: int, levels=None) -> list[dict]:
    """Direct and reduced runs on every level; the relative L2 gap at each output time."""
    levels = levels_of(sc) if levels is None else levels
    paths = level_paths(seed, sc.d1, sc.T, levels)
    out = []
    for i, ((h, dt), path) in enumerate(zip(levels, paths)):
        prob = problem_for(sc, h, dt)
        a = solve_direct(prob, path)
        b = solve_reduced(prob, path)
        gaps = [relative_l2_gap(u, v) for u, v in zip(a.values, b.values)]
        out.append({"level": i, "h": h, "dt": dt, "times": a.times, "gaps": gaps, "direct": a, "reduced": b})
    return out


def det_errors(fields: VectorFieldSet, paths, points) -> np.ndarray:
    """``|det_direct - det_formula| / det_formula`` at the final time, shape ``(seeds, points)``."""
    states = integrate_flow_ensemble(fields, paths, points, record="end")
    out = []
    for st in states:
        t = st.times[-1]
        dd, df = st.det_direct(t), st.det_formula(t)
        out.append(np.abs(dd - df) / df)
    return np.array(out)


def det_levels(fields: VectorFieldSet, seeds, T: float, dts, points) -> list[np.ndarray]:
    """Relative determinant errors on bridged paths, one array per step size."""
    levels = [(0.0, dt) for dt in dts]
    per_seed = [level_paths(s, fields.d1, T, levels) for s in seeds]
    return [det_errors(fields, [p[i] for p in per_seed], points) for i in range(len(dts))]


def det_points(sc: Scenario, per_axis: int = 5) -> np.ndarray:
    return ball_nodes(sc.d, sc.R0, per_axis)


def residual_levels(sc: Scenario, seed: int) -> list[dict]:
    """Maximum Ito-Wentzell residual over the configured bumps on each level."""
    sec = sc.residual
    specs = sec.get("bumps")
    if not specs:
        raise ValidationError("need at least one bump [x1, ..., xd, radius]", "residual.bumps")
    tests = []
    for i, b in enumerate(specs):
        if not (isinstance(b, list) and len(b) == sc.d + 1):
            raise ValidationError(f"bump needs {sc.d} centre coordinates and a radius", f"residual.bumps[{i}]")
        tests.append(bump(b[:-1], float(b[-1])))
    levels = levels_of(sc, "levels", sec) if "levels" in sec else levels_of(sc)
    paths = level_paths(seed, sc.d1, sc.T, levels)
    out = []
    for i, ((h, dt), path) in enumerate(zip(levels, paths)):
        prob = problem_for(sc, h, dt)
        traj = solve_direct(prob, path, record_all=True)
        res = ito_wentzell_residual(traj, path, sc.fields(), tests)
        out.append({"level": i, "h": h, "dt": dt, "residuals": res})
    return out


def probe_window(sc: Scenario) -> ProbeWindow:
    p = sc.probe
    for key in ("s0", "t0", "r", "alphas", "l"):
        if key not in p:
            raise ValidationError("missing required key", f"probe.{key}")
    try:
        return ProbeWindow(float(p["s0"]), float(p["t0"]), float(p["r"]), tuple(tuple(a) for a in p["alphas"]), int(p["l"]), sc.d)
    except ValueError as err:
        raise ValidationError(str(err), "probe") from None


def probe_rows(sc: Scenario, seed: int) -> list[tuple]:
    """``(level, h, dt, alpha, sup, ratio)`` for every level and multi-index."""
    if not sc.fields().g_vanish:
        raise ValidationError("the probe needs g = 0", "fields.g")
    win = probe_window(sc)
    m = float(sc.probe.get("m", 0.0))
    levels = levels_of(sc)
    paths = level_paths(seed, sc.d1, sc.T, levels)
    rows = []
    for i, ((h, dt), path) in enumerate(zip(levels, paths)):
        prob = problem_for(sc, h, dt)
        traj = solve_direct(prob, path)
        f = None if sc.fields().f.is_zero else sc.fields().f
        ratio = bound_ratio(traj, win, m, sc.R0, f=f)
        sups = sup_derivative(traj, win)
        for a in win.alphas:
            rows.append((i, h, dt, tuple(a), sups[tuple(a)], ratio[tuple(a)]))
    return rows

