"""Scenario files: ``[section]`` headers with ``key = value`` lines.

Values are JSON (expressions are quoted strings).  A coefficient component is
either one expression or a list of ``[t_start, t_end, "expr"]`` segments that
partition ``[0, T]``.  Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .fields import Cutoff, ExprField, ScalarField, VectorFieldSet
from .grid import Grid
from .jetexpr import ExprSyntaxError, PiecewiseExpr, parse

__all__ = ["Scenario", "load_scenario", "parse_scenario"]

_SCHEMA = {
    "scenario": {"name", "d", "d1", "d2", "R0", "T"},
    "grid": {"h", "nodes", "box", "dt", "cutoff", "semi_implicit", "output_every", "levels"},
    "seeds": {"list"},
    "fields": None,  # validated separately
    "hormander": {"r", "nodes", "time_nodes", "window", "n_max", "tol"},
    "probe": {"s0", "t0", "r", "alphas", "l", "m", "spike_cells", "ensemble"},
    "residual": {"bumps", "levels"},
    "tolerances": None,
}
_REQUIRED = {"scenario": ["name", "d", "d1", "d2", "R0", "T"], "grid": ["dt"]}


def _raw_sections(text: str, origin: str):
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ValidationError(f"unknown section (line {lineno})", current)
            if current in sections:
                raise ValidationError(f"duplicate section (line {lineno})", current)
            sections[current] = {}
            continue
        if current is None:
            raise ValidationError(f"line {lineno} is outside any section", origin)
        if "=" not in line:
            raise ValidationError(f"expected 'key = value' on line {lineno}", current)
        key, value = (s.strip() for s in line.split("=", 1))
        path = f"{current}.{key}"
        allowed = _SCHEMA[current]
        if allowed is not None and key not in allowed:
            raise ValidationError("unknown key", path)
        if key in sections[current]:
            raise ValidationError("duplicate key", path)
        try:
            sections[current][key] = json.loads(value)
        except json.JSONDecodeError as err:
            raise ValidationError(f"value is not valid JSON ({err.msg})", path) from None
    return sections


def _need(sec, name, key, kind, path_prefix=None):
    path = f"{path_prefix or name}.{key}"
    if key not in sec:
        raise ValidationError("missing required key", path)
    v = sec[key]
    if kind is int:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValidationError("must be an integer", path)
    elif kind is float:
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ValidationError("must be a number", path)
        v = float(v)
    return v


@dataclass
class Scenario:
    name: str
    d: int
    d1: int
    d2: int
    R0: float
    T: float
    dt: float
    components: dict  # field name -> list of component specs (or one spec for scalars)
    grid_spec: dict
    seeds: list
    hormander: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    residual: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    source_text: str = ""
    _fields: VectorFieldSet | None = field(default=None, repr=False)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    @property
    def cutoff(self) -> bool:
        return bool(self.grid_spec.get("cutoff", True))

    @property
    def semi_implicit(self) -> bool:
        return bool(self.grid_spec.get("semi_implicit", True))

    def grid(self, h: float | None = None) -> Grid:
        box = self.grid_spec.get("box")
        if h is None:
            h = self.grid_spec.get("h")
        if h is None:
            n = self.grid_spec["nodes"]
            side = (box[0][1] - box[0][0]) if box else 4 * self.R0
            h = side / n
        if box:
            return Grid.box([b[0] for b in box], [b[1] for b in box], h)
        return Grid.cube(self.R0, self.d, h)

    def fields(self) -> VectorFieldSet:
        if self._fields is None:
            self._fields = build_fields(self)
        return self._fields

    def u0(self) -> ScalarField:
        return self._scalar("u0", None)

    def _scalar(self, key, cut):
        return ScalarField(_compile(self.components.get(key, "0"), self.d, self.T, f"fields.{key}"), self.d, cut, key)


def _compile(spec, d, T, path):
    try:
        if isinstance(spec, str):
            return parse(spec, d)
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return parse(repr(float(spec)), d)
        if isinstance(spec, list) and spec and all(isinstance(s, list) for s in spec):
            segs = []
            for i, s in enumerate(spec):
                if len(s) != 3 or not isinstance(s[2], str):
                    raise ValidationError("segment must be [t_start, t_end, \"expr\"]", f"{path}.segments[{i}]")
                segs.append((float(s[0]), float(s[1]), parse(s[2], d)))
            segs.sort(key=lambda x: x[0])
            if not math.isclose(segs[0][0], 0.0, abs_tol=1e-12) or not math.isclose(segs[-1][1], T, rel_tol=1e-9):
                raise ValidationError(f"time segments must cover [0, {T}]", path)
            try:
                return PiecewiseExpr(segs)
            except ValueError as err:
                raise ValidationError(str(err), path) from None
    except ExprSyntaxError as err:
        raise ValidationError(str(err), path) from None
    raise ValidationError("component must be an expression string or a list of time segments", path)


def build_fields(sc: Scenario) -> VectorFieldSet:
    d, d1, d2 = sc.d, sc.d1, sc.d2
    comps = sc.components
    cut = Cutoff(sc.R0) if sc.cutoff else None
    sig = []
    for k in range(1 + d1 + d2):
        key = f"sigma{k}"
        spec = comps.get(key)
        if spec is None:
            if k == 0:
                spec = ["0"] * d
            else:
                raise ValidationError("missing field", f"fields.{key}")
        if not isinstance(spec, list) or len(spec) != d:
            raise ValidationError(f"needs {d} components", f"fields.{key}")
        exprs = [_compile(c, d, sc.T, f"fields.{key}[{i}]") for i, c in enumerate(spec)]
        sig.append(ExprField(exprs, d, label=f"s{k}", cutoff=cut))
    for key in comps:
        if key.startswith("sigma"):
            try:
                k = int(key[5:])
            except ValueError:
                raise ValidationError("unknown field", f"fields.{key}") from None
            if k > d1 + d2:
                raise ValidationError(f"index exceeds d1 + d2 = {d1 + d2}", f"fields.{key}")
        elif key.startswith(("nu", "g")) and key not in ("g",):
            base = "nu" if key.startswith("nu") else "g"
            try:
                k = int(key[len(base):])
            except ValueError:
                raise ValidationError("unknown field", f"fields.{key}") from None
            if not 1 <= k <= d1:
                raise ValidationError(f"index must lie in 1..d1={d1}", f"fields.{key}")
        elif key not in ("c", "f", "u0"):
            raise ValidationError("unknown field", f"fields.{key}")
    nu = [ScalarField(_compile(comps.get(f"nu{k}", "0"), d, sc.T, f"fields.nu{k}"), d, None, f"nu{k}") for k in range(1, d1 + 1)]
    g = [ScalarField(_compile(comps.get(f"g{k}", "0"), d, sc.T, f"fields.g{k}"), d, cut, f"g{k}") for k in range(1, d1 + 1)]
    return VectorFieldSet(
        d=d,
        d1=d1,
        d2=d2,
        sigma=sig,
        c=ScalarField(_compile(comps.get("c", "0"), d, sc.T, "fields.c"), d, None, "c"),
        nu=nu,
        f=ScalarField(_compile(comps.get("f", "0"), d, sc.T, "fields.f"), d, cut, "f"),
        g=g,
        R0=sc.R0,
        cutoff=cut,
    )


def parse_scenario(text: str, origin: str = "<scenario>") -> Scenario:
    secs = _raw_sections(text, origin)
    for name, keys in _REQUIRED.items():
        if name not in secs:
            raise ValidationError("missing section", name)
    s = secs["scenario"]
    name = _need(s, "scenario", "name", str)
    if not isinstance(name, str):
        raise ValidationError("must be a string", "scenario.name")
    d = _need(s, "scenario", "d", int)
    d1 = _need(s, "scenario", "d1", int)
    d2 = _need(s, "scenario", "d2", int)
    if d < 1:
        raise ValidationError("must be at least 1", "scenario.d")
    if d1 < 0:
        raise ValidationError("must be nonnegative", "scenario.d1")
    if d2 < 0:
        raise ValidationError("must be nonnegative", "scenario.d2")
    R0 = _need(s, "scenario", "R0", float)
    T = _need(s, "scenario", "T", float)
    if R0 <= 0:
        raise ValidationError("must be positive", "scenario.R0")
    if T <= 0:
        raise ValidationError("must be positive", "scenario.T")
    gsec = secs["grid"]
    dt = _need(gsec, "grid", "dt", float)
    if dt <= 0:
        raise ValidationError("must be positive", "grid.dt")
    ratio = T / dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ValidationError(f"does not divide T={T}", "grid.dt")
    if "h" not in gsec and "nodes" not in gsec:
        raise ValidationError("need either h or nodes", "grid")
    if "box" in gsec:
        box = gsec["box"]
        if not (isinstance(box, list) and len(box) == d and all(isinstance(b, list) and len(b) == 2 for b in box)):
            raise ValidationError(f"must be a list of {d} [lower, upper] pairs", "grid.box")
    seeds = secs.get("seeds", {}).get("list", [1])
    if not isinstance(seeds, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in seeds):
        raise ValidationError("must be a list of integers", "seeds.list")
    comps = secs.get("fields", {})
    sc = Scenario(
        name=name,
        d=d,
        d1=d1,
        d2=d2,
        R0=R0,
        T=T,
        dt=dt,
        components=comps,
        grid_spec=gsec,
        seeds=seeds,
        hormander=secs.get("hormander", {}),
        probe=secs.get("probe", {}),
        residual=secs.get("residual", {}),
        tolerances=secs.get("tolerances", {}),
        source_text=text,
    )
    try:
        sc.grid()
    except ValueError as err:
        raise ValidationError(str(err), "grid.h") from None
    sc.fields()
    sc.u0()
    return sc


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as err:
        raise ValidationError(f"cannot read scenario ({err.strerror})", str(p)) from None
    return parse_scenario(text, str(p))
