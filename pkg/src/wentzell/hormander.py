"""Bracket hulls of the diffusion fields and the pointwise rank condition."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .fields import BracketField, VectorField, VectorFieldSet

__all__ = [
    "HullOverflow",
    "BracketHull",
    "HormanderReport",
    "generate_hull",
    "rank_at",
    "check_condition",
]

DEFAULT_CAP = 4096
DEFAULT_TOL = 1e-8


class HullOverflow(RuntimeError):
    pass


@dataclass
class BracketHull:
    """Members of the hulls up to ``depth`` with the depth at which each appeared.

    ``parents[i]`` is ``None`` for generators and ``(k, j)`` when member ``i``
    is ``[generator k, member j]``.
    """

    generators: list
    members: list
    depths: list
    parents: list
    depth: int

    def upto(self, n: int) -> list:
        return [m for m, dep in zip(self.members, self.depths) if dep <= n]

    def labels(self, n: int | None = None) -> list:
        n = self.depth if n is None else n
        return [m.label for m in self.upto(n)]

    def sizes(self) -> list:
        return [len(self.upto(n)) for n in range(self.depth + 1)]


def generate_hull(fields_or_generators, n_max: int, cap: int = DEFAULT_CAP) -> BracketHull:
    """Hull built from the diffusion fields only (the drift is never bracketed).

    Level ``n + 1`` adds ``[s, M]`` for every generator ``s`` and every member
    ``M`` new at level ``n``.  Brackets are skipped when the word already
    exists, when it is a self-bracket ``[A, A]``, or when its mirror ``[M, s]``
    exists (it is then the same field up to sign).
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if isinstance(fields_or_generators, VectorFieldSet):
        gens = list(fields_or_generators.diffusion)
    else:
        gens = list(fields_or_generators)
    if not gens:
        raise ValueError("need at least one diffusion field")
    members = list(gens)
    depths = [0] * len(gens)
    parents = [None] * len(gens)
    seen = {m.label for m in members}
    frontier = list(range(len(gens)))
    for level in range(1, n_max + 1):
        new = []
        for k, j in itertools.product(range(len(gens)), frontier):
            g, m = gens[k], members[j]
            if g.label == m.label:
                continue
            word = f"[{g.label},{m.label}]"
            mirror = f"[{m.label},{g.label}]"
            if word in seen or mirror in seen:
                continue
            if len(members) >= cap:
                raise HullOverflow(f"hull exceeds {cap} members at depth {level}")
            members.append(BracketField(g, m))
            depths.append(level)
            parents.append((k, j))
            seen.add(word)
            new.append(len(members) - 1)
        frontier = new
    return BracketHull(gens, members, depths, parents, n_max)


def _member_values(members, points, t):
    """Stack member values into ``(P, d, nmembers)``."""
    return np.stack([m(points, t) for m in members], axis=-1)


def rank_at(hull: BracketHull | list, point, t: float = 0.0, tol: float = DEFAULT_TOL, n: int | None = None):
    """Rank of the ``d x |hull|`` value matrix at ``point`` and its singular values.

    The rank counts singular values above ``tol`` times the largest one.
    """
    members = hull.upto(hull.depth if n is None else n) if isinstance(hull, BracketHull) else list(hull)
    p = np.atleast_2d(np.asarray(point, dtype=float))
    mat = _member_values(members, p, t)
    s = np.linalg.svd(mat, compute_uv=False)
    ranks = _ranks(s, tol)
    if np.ndim(point) == 1:
        return int(ranks[0]), s[0]
    return ranks, s


def _ranks(s: np.ndarray, tol: float) -> np.ndarray:
    top = s[..., :1]
    return np.sum((s > tol * top) & (top > 0), axis=-1)


@dataclass
class HormanderReport:
    d: int
    n_max: int
    tol: float
    times: np.ndarray
    points: np.ndarray
    minimal_n: np.ndarray  # (nt, P), -1 where rank d is never reached
    rank: np.ndarray  # achieved rank at n_max
    singular_values: np.ndarray  # (nt, P, d) at minimal n (or n_max on failure)
    rank_by_depth: np.ndarray = field(repr=False, default=None)  # (n_max+1, nt, P)

    @property
    def ok(self) -> bool:
        return bool(np.all(self.minimal_n >= 0))

    @property
    def global_n(self) -> int | None:
        """Uniform depth achieving full rank at every node, or None on failure."""
        return int(self.minimal_n.max()) if self.ok else None

    def failures(self) -> np.ndarray:
        """``(t, x)`` rows of nodes where full rank is never reached."""
        it, ip = np.nonzero(self.minimal_n < 0)
        return np.column_stack([self.times[it], self.points[ip]])

    def margin(self) -> float:
        """Smallest relative ``s_d / s_1`` at the reported depths."""
        s = self.singular_values
        with np.errstate(invalid="ignore", divide="ignore"):
            r = s[..., -1] / s[..., 0]
        return float(np.nanmin(r))

    def rows(self):
        for it, t in enumerate(self.times):
            for ip, x in enumerate(self.points):
                yield (
                    float(t),
                    *[float(v) for v in x],
                    int(self.minimal_n[it, ip]),
                    int(self.rank[it, ip]),
                    *[float(v) for v in self.singular_values[it, ip]],
                )

    def header(self):
        return ["t"] + [f"x{i + 1}" for i in range(self.d)] + ["minimal_n", "rank"] + [
            f"s_{i + 1}" for i in range(self.d)
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def ball_nodes(d: int, r: float, per_axis: int) -> np.ndarray:
    """Tensor nodes of ``[-r, r]^d`` inside the closed ball of radius ``r``."""
    ax = np.linspace(-r, r, per_axis)
    pts = np.stack(np.meshgrid(*[ax] * d, indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.linalg.norm(pts, axis=1) <= r * (1 + 1e-12)]


def check_condition(
    fields: VectorFieldSet | list,
    r: float,
    window=(0.0, 0.0),
    nodes_per_axis: int = 9,
    time_nodes: int = 1,
    n_max: int = 3,
    tol: float = DEFAULT_TOL,
    points=None,
    cap: int = DEFAULT_CAP,
) -> HormanderReport:
    """Minimal bracket depth achieving rank ``d`` at each node of ``[S,T] x B_r``."""
    if isinstance(fields, VectorFieldSet):
        if r > fields.R0 * (1 + 1e-12):
            raise ValueError(f"ball radius {r} exceeds R0={fields.R0}")
        d = fields.d
    else:
        d = fields[0].dim
    hull = generate_hull(fields, n_max, cap)
    pts = ball_nodes(d, r, nodes_per_axis) if points is None else np.asarray(points, dtype=float)
    S, T = window
    times = np.linspace(S, T, time_nodes) if time_nodes > 1 else np.array([float(S)])
    nt, P = len(times), len(pts)
    minimal = np.full((nt, P), -1, dtype=int)
    svals = np.zeros((nt, P, d))
    rank_by_depth = np.zeros((n_max + 1, nt, P), dtype=int)
    for it, t in enumerate(times):
        vals = _member_values(hull.members, pts, t)
        for n in range(n_max + 1):
            cols = [i for i, dep in enumerate(hull.depths) if dep <= n]
            s = np.linalg.svd(vals[:, :, cols], compute_uv=False)
            sd = np.zeros((P, d))
            sd[:, : s.shape[1]] = s
            rk = _ranks(sd, tol)
            rank_by_depth[n, it] = rk
            hit = (rk == d) & (minimal[it] < 0)
            minimal[it, hit] = n
            svals[it, hit] = sd[hit]
            if n == n_max:
                miss = minimal[it] < 0
                svals[it, miss] = sd[miss]
    return HormanderReport(d, n_max, tol, times, pts, minimal, rank_by_depth[-1], svals, rank_by_depth)
