"""Scenario-driven command line.

Every command reads one scenario file, writes its artifacts and a
``manifest.json`` into ``--out`` and exits with 0 on success, 2 on invalid
input and 3 when a computation aborts.  ``WENTZELL_WORKERS`` sets the number of
worker processes used across seeds (default 1); results are always gathered in
seed order, so artifacts do not depend on it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache, partial
from pathlib import Path

import numpy as np

from . import __version__, runs
from .errors import NumericalAbort, ValidationError
from .flow import flow_summary, integrate_flow, sample_path, write_snapshot
from .hormander import DEFAULT_TOL, check_condition
from .pde import BOUNDARY_ABORT, norm_ledger, relative_l2_gap, solve_direct, solve_reduced, write_trajectory
from .scenario import Scenario, load_scenario, parse_scenario

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

DEFAULT_TOLERANCES = {
    "det_rel": 0.05,
    "twin_gap": 0.05,
    "rank_tol": DEFAULT_TOL,
    "boundary": BOUNDARY_ABORT,
}


def _workers() -> int:
    raw = os.environ.get("WENTZELL_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"not an integer: {raw!r}", "WENTZELL_WORKERS") from None
    if n < 1:
        raise ValidationError("must be at least 1", "WENTZELL_WORKERS")
    return n


@lru_cache(maxsize=4)
def _scenario_from_text(text: str) -> Scenario:
    return parse_scenario(text)


def _per_seed(fn, sc: Scenario, seeds):
    """``[fn(sc, seed) for seed in seeds]``, optionally across processes."""
    n = min(_workers(), len(seeds))
    if n <= 1:
        return [fn(sc, s) for s in seeds]
    with ProcessPoolExecutor(n) as pool:
        return list(pool.map(_remote, [fn] * len(seeds), [sc.source_text] * len(seeds), seeds))


def _remote(fn, text, seed):
    return fn(_scenario_from_text(text), seed)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, tuple):
        return "(" + ",".join(str(x) for x in v) + ")"
    return v


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class _Run:
    def __init__(self, command: str, sc: Scenario, out: Path, seeds):
        self.command = command
        self.sc = sc
        self.out = out
        self.seeds = seeds
        self.artifacts: list[str] = []
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def csv(self, name, header, rows):
        _write_csv(self.path(name), header, rows)

    @property
    def tolerances(self) -> dict:
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.sc.tolerances)
        return tol

    def manifest(self) -> None:
        doc = {
            "command": self.command,
            "scenario": self.sc.name,
            "scenario_sha256": self.sc.sha256,
            "version": __version__,
            "seeds": list(self.seeds),
            "tolerances": self.tolerances,
            "artifacts": self.artifacts,
            "summary": self.summary,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_check_hormander(run: _Run, args) -> None:
    sc = run.sc
    hc = sc.hormander
    window = hc.get("window", [0.0, sc.T])
    rep = check_condition(
        sc.fields(),
        float(hc.get("r", sc.R0)),
        (float(window[0]), float(window[1])),
        nodes_per_axis=int(hc.get("nodes", 9)),
        time_nodes=int(hc.get("time_nodes", 1)),
        n_max=int(hc.get("n_max", 3)),
        tol=float(hc.get("tol", run.tolerances["rank_tol"])),
    )
    header = rep.header()
    _write_csv(run.path("hormander.csv"), header, rep.rows())
    run.summary = {"ok": rep.ok, "global_n": rep.global_n, "margin": rep.margin(), "nodes": int(rep.points.shape[0])}
    if rep.ok:
        print(f"{sc.name}: condition holds, global minimal n = {rep.global_n}")
    else:
        print(f"{sc.name}: condition fails at {len(rep.failures())} nodes up to n = {rep.n_max}")


def _flow_task(sc: Scenario, seed: int):
    path = sample_path(seed, sc.d1, sc.T, sc.dt)
    every = sc.grid_spec.get("output_every")
    record = "end" if every is None else max(1, int(round(every / sc.dt)))
    return integrate_flow(sc.fields(), path, grid=sc.grid(), record=record)


def cmd_simulate_flow(run: _Run, args) -> None:
    states = _per_seed(_flow_task, run.sc, run.seeds)
    rows = []
    for seed, st in zip(run.seeds, states):
        write_snapshot(st, run.path(f"flow_seed{seed}.bin"))
        rows.extend((seed, *r) for r in flow_summary(st))
    run.csv("flow_summary.csv", ["seed", "t", "det_min", "det_max", "min_singular", "det_rel_gap"], rows)
    gap = max(r[-1] for r in rows)
    run.summary = {"det_rel_gap": gap, "within_tolerance": gap <= run.tolerances["det_rel"]}
    print(f"{run.sc.name}: max relative det gap {gap:.3e}")


def cmd_verify_det(run: _Run, args) -> None:
    sc = run.sc
    dts = [dt for _, dt in runs.levels_of(sc)]
    if len(dts) == 1:
        dts = [sc.dt, sc.dt / 2, sc.dt / 4]
    pts = runs.det_points(sc)
    errs = runs.det_levels(sc.fields(), run.seeds, sc.T, dts, pts)
    rows = []
    for dt, e in zip(dts, errs):
        for seed, es in zip(run.seeds, e):
            rows.append((seed, dt, float(np.median(es)), float(es.max())))
    run.csv("det_levels.csv", ["seed", "dt", "median_rel_error", "max_rel_error"], rows)
    med = [float(np.median(e)) for e in errs]
    ratios = [a / b for a, b in zip(med[:-1], med[1:])]
    run.summary = {"median": med, "ratios": ratios, "max": max(float(e.max()) for e in errs)}
    for dt, m in zip(dts, med):
        print(f"dt={dt:.3g}: median relative det error {m:.3e}")


def _solve_runs(sc: Scenario, seed: int, method: str = "both") -> list[dict]:
    levels = runs.levels_of(sc)
    paths = runs.level_paths(seed, sc.d1, sc.T, levels)
    out = []
    for (h, dt), path in zip(levels, paths):
        prob = runs.problem_for(sc, h, dt)
        res = {}
        if method in ("direct", "both"):
            res["direct"] = solve_direct(prob, path)
        if method in ("reduced", "both"):
            res["reduced"] = solve_reduced(prob, path)
        out.append(res)
    return out


def cmd_solve(run: _Run, args) -> None:
    sc = run.sc
    results = _per_seed(partial(_solve_runs, method=args.method), sc, run.seeds)
    levels = runs.levels_of(sc)
    gap_rows = []
    header = ["t", "H0", "H1", "H2", "H4", "H5", "min", "max"]
    for seed, per_level in zip(run.seeds, results):
        for lv, res in enumerate(per_level):
            tag = f"seed{seed}" + (f"_level{lv}" if len(levels) > 1 else "")
            for method, traj in res.items():
                write_trajectory(traj, run.path(f"traj_{method}_{tag}.bin"))
                run.csv(f"norms_{method}_{tag}.csv", header, norm_ledger(traj))
            if len(res) == 2:
                h, dt = levels[lv]
                a, b = res["direct"], res["reduced"]
                for t, u, v in zip(a.times, a.values, b.values):
                    gap_rows.append((seed, lv, h, dt, float(t), relative_l2_gap(u, v)))
    if gap_rows:
        run.csv("gap.csv", ["seed", "level", "h", "dt", "t", "relative_l2_gap"], gap_rows)
        finals = {}
        for seed, lv, h, dt, t, g in gap_rows:
            if abs(t - sc.T) < 1e-12:
                finals.setdefault(lv, []).append(g)
        worst = [max(finals[lv]) for lv in sorted(finals)]
        run.summary = {
            "final_gap_by_level": worst,
            "within_tolerance": worst[-1] <= run.tolerances["twin_gap"],
        }
        for lv, g in enumerate(worst):
            h, dt = levels[lv]
            print(f"h={h:.4g} dt={dt:.3g}: max relative L2 gap {g:.3e}")


def cmd_probe(run: _Run, args) -> None:
    sc = run.sc
    results = _per_seed(runs.probe_rows, sc, run.seeds)
    win = runs.probe_window(sc)
    rows = []
    for seed, rs in zip(run.seeds, results):
        for lv, h, dt, a, sup, ratio in rs:
            rows.append((sc.name, seed, lv, h, dt, a, win.s0, win.t0, win.r, sup, ratio))
    run.csv("probe.csv", ["scenario", "seed", "level", "h", "dt", "alpha", "s0", "t0", "r", "sup", "ratio"], rows)
    best: dict = {}
    for r in rows:
        best[r[2]] = max(best.get(r[2], 0.0), r[-1])
    run.summary = {"max_ratio_by_level": [best[k] for k in sorted(best)]}
    for lv in sorted(best):
        print(f"level {lv}: ensemble max ratio {best[lv]:.6g}")


def cmd_iw_residual(run: _Run, args) -> None:
    sc = run.sc
    results = _per_seed(runs.residual_levels, sc, run.seeds)
    rows = []
    for seed, per_level in zip(run.seeds, results):
        for r in per_level:
            for j, v in enumerate(r["residuals"]):
                rows.append((seed, r["level"], r["h"], r["dt"], j, float(v)))
    run.csv("iw_residual.csv", ["seed", "level", "h", "dt", "bump", "residual"], rows)
    worst: dict = {}
    for seed, lv, h, dt, j, v in rows:
        worst[lv] = max(worst.get(lv, 0.0), abs(v))
    run.summary = {"max_residual_by_level": [worst[k] for k in sorted(worst)]}
    for lv in sorted(worst):
        print(f"level {lv}: max residual {worst[lv]:.3e}")


COMMANDS = {
    "check-hormander": cmd_check_hormander,
    "simulate-flow": cmd_simulate_flow,
    "verify-det": cmd_verify_det,
    "solve": cmd_solve,
    "probe": cmd_probe,
    "iw-residual": cmd_iw_residual,
}


def _parse_seeds(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}", "--seeds") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wentzell", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seeds", default=None, help="comma-separated seeds overriding the scenario list")
        if name == "solve":
            p.add_argument("--method", choices=["direct", "reduced", "both"], default="both")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        seeds = _parse_seeds(args.seeds) if args.seeds else list(sc.seeds)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            raise ValidationError(f"cannot create output directory ({err.strerror})", "--out") from None
        if not os.access(out, os.W_OK):
            raise ValidationError("output directory is not writable", "--out")
        run = _Run(args.command, sc, out, seeds)
        COMMANDS[args.command](run, args)
        run.manifest()
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalAbort as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
