"""Vector fields, first-order operators, Lie brackets and flow coordinate changes.

Fields are evaluated through jets so that any derived field (brackets of
brackets, the flow drift) can be differentiated to the order its consumer
needs.  Derived fields are closures over their inputs, not expanded trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, GridField, gradient, interpolate
from .jetexpr import Expr, Jet, PiecewiseExpr, parse

__all__ = [
    "Cutoff",
    "ScalarField",
    "VectorField",
    "ExprField",
    "BracketField",
    "DriftField",
    "ScaledField",
    "VectorFieldSet",
    "apply_L",
    "lie_bracket",
    "lie_bracket_discrete",
    "drift_correction",
    "bar_transform",
    "hat_pullback",
    "check_pushforward",
]


# ---------------------------------------------------------------------------
# cutoff


@dataclass(frozen=True)
class Cutoff:
    """Smooth radial step: 1 on ``|x| <= R0``, 0 for ``|x| >= R_cut``.

    With ``s = (|x|^2 - R0^2) / (R_cut^2 - R0^2)`` the profile is
    ``1 - psi(s)``, ``psi = e^{-1/s} / (e^{-1/s} + e^{-1/(1-s)})``, built from
    the same ``exp(-1/x)`` germ as the standard mollifier.  Outside
    ``0.01 < s < 0.99`` the profile differs from 0 or 1 by less than
    ``e^{-98}``, so it is set to the exact constant there.
    """

    R0: float
    R_cut: float | None = None

    def __post_init__(self):
        if self.R_cut is None:
            object.__setattr__(self, "R_cut", 2.0 * self.R0)
        if not 0 < self.R0 < self.R_cut:
            raise ValueError("need 0 < R0 < R_cut")

    _LO = 0.01
    _HI = 0.99

    @property
    def support_radius(self) -> float:
        """Radius beyond which the profile is exactly zero."""
        r0, rc = self.R0, self.R_cut
        return float(np.sqrt(r0 * r0 + self._HI * (rc * rc - r0 * r0)))

    def _s(self, r2):
        r0, rc = self.R0, self.R_cut
        return (r2 - r0 * r0) / (rc * rc - r0 * r0)

    def __call__(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        s = self._s(np.sum(x * x, axis=-1))
        out = np.where(s <= self._LO, 1.0, 0.0)
        mid = (s > self._LO) & (s < self._HI)
        if np.any(mid):
            sm = s[mid]
            a = np.exp(-1.0 / sm)
            b = np.exp(-1.0 / (1.0 - sm))
            out[mid] = 1.0 - a / (a + b)
        return out

    def jet(self, points, order: int) -> Jet:
        x = np.asarray(points, dtype=float)
        d = x.shape[-1]
        batch = x.shape[:-1]
        if order == 0:
            return Jet(d, 0, self(x)[None])
        s = self._s(np.sum(x * x, axis=-1))
        out = Jet.constant(d, order, 0.0, batch)
        out.coeffs[0] = np.where(s <= self._LO, 1.0, 0.0)
        mid = s > self._LO
        mid &= s < self._HI
        if np.any(mid):
            xm = x[mid]
            coords = [Jet.variable(d, order, i, xm[:, i]) for i in range(d)]
            r2 = coords[0] * coords[0]
            for cj in coords[1:]:
                r2 = r2 + cj * cj
            r0, rc = self.R0, self.R_cut
            sj = (r2 - r0 * r0) * (1.0 / (rc * rc - r0 * r0))
            a = (-sj.reciprocal()).exp()
            b = (-(1.0 - sj).reciprocal()).exp()
            step = 1.0 - a / (a + b)
            out.coeffs[:, mid] = step.coeffs
        return out


# ---------------------------------------------------------------------------
# scalar coefficients


def _as_expr(source, d):
    if isinstance(source, (Expr, PiecewiseExpr)):
        return source
    if isinstance(source, (int, float)):
        return parse(repr(float(source)), d)
    return parse(source, d)


class ScalarField:
    """Scalar coefficient (c, nu, f, g, u0), optionally multiplied by a cutoff."""

    def __init__(self, expr, d: int, cutoff: Cutoff | None = None, label: str = ""):
        self.expr = _as_expr(expr, d)
        self.dim = d
        self.cutoff = cutoff
        self.label = label or getattr(self.expr, "source", "")

    @property
    def time_dependent(self) -> bool:
        return self.expr.time_dependent

    @property
    def is_zero(self) -> bool:
        src = getattr(self.expr, "source", "").strip()
        try:
            return float(src) == 0.0
        except ValueError:
            return False

    def __call__(self, points, t: float = 0.0) -> np.ndarray:
        v = self.expr(points, t)
        if self.cutoff is not None:
            v = v * self.cutoff(points)
        return v

    def jet(self, points, t: float = 0.0, order: int = 0) -> Jet:
        j = self.expr.jet(points, t, order)
        if self.cutoff is not None:
            j = j * self.cutoff.jet(points, order)
        return j


# ---------------------------------------------------------------------------
# vector fields


class VectorField:
    """Base class: subclasses implement :meth:`jets`."""

    dim: int
    label: str

    def jets(self, points, t: float, order: int) -> list[Jet]:
        raise NotImplementedError

    def __call__(self, points, t: float = 0.0) -> np.ndarray:
        """Values at ``points`` (shape ``(..., d)``), returned with shape ``(..., d)``."""
        return np.stack([j.value for j in self.jets(points, t, 0)], axis=-1)

    def jacobian(self, points, t: float = 0.0) -> np.ndarray:
        """``(..., d, d)`` array with entry ``[i, j] = D_j field^i``."""
        js = self.jets(points, t, 1)
        return np.stack([np.moveaxis(j.gradient(), 0, -1) for j in js], axis=-2)

    def __repr__(self):
        return f"{type(self).__name__}({self.label!r})"


class ExprField(VectorField):
    def __init__(self, components: Sequence, d: int | None = None, label: str = "", cutoff: Cutoff | None = None):
        comps = list(components)
        d = len(comps) if d is None else d
        if len(comps) != d:
            raise ValueError(f"field needs {d} components, got {len(comps)}")
        self.components = [_as_expr(c, d) for c in comps]
        self.dim = d
        self.cutoff = cutoff
        self.label = label or "(" + ", ".join(c.source for c in self.components) + ")"

    @property
    def time_dependent(self) -> bool:
        return any(c.time_dependent for c in self.components)

    @property
    def is_zero(self) -> bool:
        for c in self.components:
            try:
                if float(c.source) != 0.0:
                    return False
            except ValueError:
                return False
        return True

    def jets(self, points, t: float, order: int, cutoff_jet: Jet | None = None) -> list[Jet]:
        """Component jets; ``cutoff_jet`` lets callers share one cutoff evaluation."""
        out = [c.jet(points, t, order) for c in self.components]
        if self.cutoff is not None:
            z = self.cutoff.jet(points, order) if cutoff_jet is None else cutoff_jet.truncate(order)
            out = [j * z for j in out]
        return out


class BracketField(VectorField):
    """``[alpha, beta] = D beta . alpha - D alpha . beta``."""

    def __init__(self, alpha: VectorField, beta: VectorField):
        if alpha.dim != beta.dim:
            raise ValueError("bracket of fields with different dimensions")
        self.alpha = alpha
        self.beta = beta
        self.dim = alpha.dim
        self.label = f"[{alpha.label},{beta.label}]"

    def jets(self, points, t: float, order: int) -> list[Jet]:
        a = self.alpha.jets(points, t, order + 1)
        b = self.beta.jets(points, t, order + 1)
        a0 = [j.truncate(order) for j in a]
        b0 = [j.truncate(order) for j in b]
        out = []
        for i in range(self.dim):
            acc = None
            for j in range(self.dim):
                term = a0[j] * b[i].diff(j) - b0[j] * a[i].diff(j)
                acc = term if acc is None else acc + term
            out.append(acc)
        return out


class DriftField(VectorField):
    """``b = sigma0 - 1/2 sum_k D sigma^k . sigma^k`` over the noise fields."""

    def __init__(self, sigma0: VectorField, noise: Sequence[VectorField]):
        self.sigma0 = sigma0
        self.noise = list(noise)
        self.dim = sigma0.dim
        self.label = f"drift({sigma0.label})"

    def jets(self, points, t: float, order: int) -> list[Jet]:
        out = list(self.sigma0.jets(points, t, order))
        for s in self.noise:
            sj = s.jets(points, t, order + 1)
            s0 = [j.truncate(order) for j in sj]
            for i in range(self.dim):
                corr = None
                for j in range(self.dim):
                    term = s0[j] * sj[i].diff(j)
                    corr = term if corr is None else corr + term
                out[i] = out[i] - 0.5 * corr
        return out


class ScaledField(VectorField):
    def __init__(self, base: VectorField, factor: float):
        self.base = base
        self.factor = float(factor)
        self.dim = base.dim
        self.label = f"{factor:g}*{base.label}"

    def jets(self, points, t: float, order: int) -> list[Jet]:
        return [j * self.factor for j in self.base.jets(points, t, order)]


def lie_bracket(alpha: VectorField, beta: VectorField) -> BracketField:
    return BracketField(alpha, beta)


# ---------------------------------------------------------------------------
# coefficient family


@dataclass
class VectorFieldSet:
    """All coefficients of the model equation.

    ``sigma[0]`` is the drift field, ``sigma[1..d1]`` the fields driven by the
    Wiener processes and ``sigma[d1+1..d1+d2]`` the pure diffusion fields.
    """

    d: int
    d1: int
    d2: int
    sigma: list
    c: ScalarField
    nu: list
    f: ScalarField
    g: list
    R0: float = 1.0
    cutoff: Cutoff | None = None
    _drift: VectorField | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.sigma) != 1 + self.d1 + self.d2:
            raise ValueError(f"expected {1 + self.d1 + self.d2} sigma fields, got {len(self.sigma)}")
        if len(self.nu) != self.d1 or len(self.g) != self.d1:
            raise ValueError("nu and g need exactly d1 entries")
        for s in self.sigma:
            if s.dim != self.d:
                raise ValueError("sigma field dimension mismatch")

    @classmethod
    def build(
        cls,
        d: int,
        d1: int,
        d2: int,
        sigma: Sequence[Sequence],
        c="0",
        nu: Sequence | None = None,
        f="0",
        g: Sequence | None = None,
        R0: float = 1.0,
        cutoff: bool | Cutoff = True,
    ) -> "VectorFieldSet":
        """Assemble a set from expression text (or parsed expressions)."""
        if cutoff is True:
            cut = Cutoff(R0)
        elif cutoff is False or cutoff is None:
            cut = None
        else:
            cut = cutoff
        labels = ["s0"] + [f"s{k}" for k in range(1, 1 + d1 + d2)]
        fields_ = [ExprField(comps, d, label=lab, cutoff=cut) for comps, lab in zip(sigma, labels)]
        nu = ["0"] * d1 if nu is None else list(nu)
        g = ["0"] * d1 if g is None else list(g)
        return cls(
            d=d,
            d1=d1,
            d2=d2,
            sigma=fields_,
            c=ScalarField(c, d, None, "c"),
            nu=[ScalarField(v, d, None, f"nu{k + 1}") for k, v in enumerate(nu)],
            f=ScalarField(f, d, cut, "f"),
            g=[ScalarField(v, d, cut, f"g{k + 1}") for k, v in enumerate(g)],
            R0=R0,
            cutoff=cut,
        )

    @property
    def noise(self) -> list:
        return self.sigma[1 : 1 + self.d1]

    @property
    def diffusion(self) -> list:
        return self.sigma[1 + self.d1 :]

    @property
    def drift(self) -> VectorField:
        if self._drift is None:
            self._drift = DriftField(self.sigma[0], self.noise)
        return self._drift

    @property
    def g_vanish(self) -> bool:
        return all(s.is_zero for s in self.g)

    @property
    def nu_g_vanish(self) -> bool:
        return all(s.is_zero for s in self.nu) and all(s.is_zero for s in self.g)

    def flow_coefficients(self, points, t: float):
        """Values and Jacobians of the noise fields and of the drift ``b``.

        Returns ``(sig, dsig, b, db)`` with shapes ``(d1, P, d)``,
        ``(d1, P, d, d)``, ``(P, d)``, ``(P, d, d)`` for ``points`` of shape
        ``(P, d)``.  The noise jets are computed once at order 2 and shared.
        """
        d = self.d
        z = self.cutoff.jet(points, 2) if self.cutoff is not None and self.d1 else None

        def jets(fld, order):
            if z is not None and isinstance(fld, ExprField) and fld.cutoff is self.cutoff:
                return fld.jets(points, t, order, cutoff_jet=z)
            return fld.jets(points, t, order)

        s0 = jets(self.sigma[0], 1)
        b = list(s0)
        sig, dsig = [], []
        for s in self.noise:
            sj = jets(s, 2)
            s1 = [j.truncate(1) for j in sj]
            sig.append(np.stack([j.value for j in s1], axis=-1))
            dsig.append(np.stack([np.moveaxis(j.gradient(), 0, -1) for j in s1], axis=-2))
            for i in range(d):
                corr = None
                for j in range(d):
                    term = s1[j] * sj[i].diff(j)
                    corr = term if corr is None else corr + term
                b[i] = b[i] - 0.5 * corr
        bval = np.stack([j.value for j in b], axis=-1)
        dbval = np.stack([np.moveaxis(j.gradient(), 0, -1) for j in b], axis=-2)
        P = np.asarray(points).shape[0]
        if not sig:
            sig = np.zeros((0, P, d))
            dsig = np.zeros((0, P, d, d))
        return np.asarray(sig), np.asarray(dsig), bval, dbval


def drift_correction(fields: VectorFieldSet) -> VectorField:
    return DriftField(fields.sigma[0], fields.noise)


# ---------------------------------------------------------------------------
# grid operators


def _field_on_grid(sigma, grid: Grid, t: float) -> np.ndarray:
    """Sample a field (callable or ``(d, *shape)`` array) as ``(d, *shape)``."""
    if isinstance(sigma, VectorField):
        if sigma.dim != grid.dim:
            raise ValueError(f"field has dimension {sigma.dim}, grid has {grid.dim}")
        return np.moveaxis(sigma(grid.points(), t), -1, 0)
    arr = np.asarray(sigma, dtype=float)
    if arr.shape != (grid.dim,) + grid.shape:
        raise ValueError(f"grid field has shape {arr.shape}, expected {(grid.dim,) + grid.shape}")
    return arr


def apply_L(sigma, u: GridField, t: float = 0.0) -> GridField:
    """``L_sigma u = sigma^i D_i u`` with fourth-order central differences."""
    vals = _field_on_grid(sigma, u.grid, t)
    du = gradient(u.values, u.grid.h)
    return GridField(u.grid, np.sum(vals * du, axis=0))


def lie_bracket_discrete(alpha: np.ndarray, beta: np.ndarray, grid: Grid) -> np.ndarray:
    """Bracket of grid-sampled fields ``(d, *shape)`` using difference Jacobians."""
    da = np.stack([gradient(a, grid.h) for a in alpha])  # [i, j] = D_j alpha^i
    db = np.stack([gradient(b, grid.h) for b in beta])
    return np.einsum("j...,ij...->i...", alpha, db) - np.einsum("j...,ij...->i...", beta, da)


def bar_transform(sigma: VectorField, flow, t: float) -> np.ndarray:
    """``(DX_t)^{-1} sigma(t, X_t(x))`` on the lattice of ``flow``, shape ``(d, *shape)``."""
    X = flow.lattice_positions(t)
    DX = flow.lattice_jacobians(t)
    det = np.linalg.det(DX)
    if np.any(det <= flow.det_floor):
        raise np.linalg.LinAlgError("flow Jacobian is singular on the lattice")
    return np.moveaxis(solve_small(DX, sigma(X, t)), -1, 0)


def solve_small(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``A^{-1} b`` for ``A`` of shape ``(..., d, d)``; closed form for d = 2."""
    if A.shape[-1] == 2:
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        x0 = (A[..., 1, 1] * b[..., 0] - A[..., 0, 1] * b[..., 1]) / det
        x1 = (A[..., 0, 0] * b[..., 1] - A[..., 1, 0] * b[..., 0]) / det
        return np.stack([x0, x1], axis=-1)
    return np.linalg.solve(A, b[..., None])[..., 0]


def _apply_scalar(phi, pts, t, grid):
    if isinstance(phi, GridField):
        return interpolate(phi.values, phi.grid, pts)
    if isinstance(phi, np.ndarray):
        return interpolate(phi, grid, pts)
    try:
        return np.asarray(phi(pts, t), dtype=float)
    except TypeError:
        return np.asarray(phi(pts), dtype=float)


def hat_pullback(phi, flow, t: float) -> GridField:
    """``phi(X_t(x))`` at lattice nodes; grid inputs are interpolated."""
    X = flow.lattice_positions(t)
    return GridField(flow.grid, _apply_scalar(phi, X, t, flow.grid))


def check_pushforward(phi, flow, t: float) -> GridField:
    """``phi(X_t^{-1}(x))`` at lattice nodes; grid inputs are interpolated."""
    Xinv = flow.lattice_inverse(t)
    return GridField(flow.grid, _apply_scalar(phi, Xinv, t, flow.grid))
