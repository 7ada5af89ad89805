"""Uniform periodic lattices and scalar calculus on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "Grid",
    "GridField",
    "derivative",
    "gradient",
    "sobolev_norm",
    "interpolate",
    "MAX_ORDER",
]

MAX_ORDER = 4

# central stencils of fourth order accuracy: (offsets, weights, power of h)
_STENCILS = {
    1: (np.array([-2, -1, 1, 2]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0, 1),
    2: (np.array([-2, -1, 0, 1, 2]), np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, 2),
    3: (
        np.array([-3, -2, -1, 1, 2, 3]),
        np.array([1.0, -8.0, 13.0, -13.0, 8.0, -1.0]) / 8.0,
        3,
    ),
    4: (
        np.array([-3, -2, -1, 0, 1, 2, 3]),
        np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0,
        4,
    ),
}


@dataclass(frozen=True)
class Grid:
    """Cell-centred-free periodic lattice ``lower + h * i``, ``i = 0..n-1`` per axis."""

    lower: tuple
    shape: tuple
    h: float

    def __post_init__(self):
        if len(self.lower) != len(self.shape):
            raise ValueError("lower corner and shape disagree on dimension")
        if self.h <= 0:
            raise ValueError("spacing must be positive")

    @classmethod
    def box(cls, lower, upper, h: float) -> "Grid":
        """Periodic lattice on ``[lower, upper)`` with spacing ``h`` on every axis."""
        lower = tuple(float(a) for a in lower)
        shape = []
        for a, b in zip(lower, upper):
            n = (b - a) / h
            if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
                raise ValueError(f"side [{a}, {b}) is not a multiple of h={h}")
            shape.append(int(round(n)))
        return cls(lower, tuple(shape), float(h))

    @classmethod
    def cube(cls, R0: float, d: int, h: float) -> "Grid":
        """The default enclosing box ``[-2 R0, 2 R0)^d``."""
        return cls.box([-2 * R0] * d, [2 * R0] * d, h)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def upper(self):
        return tuple(a + n * self.h for a, n in zip(self.lower, self.shape))

    @property
    def lengths(self):
        return tuple(n * self.h for n in self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def axes(self):
        return [a + self.h * np.arange(n) for a, n in zip(self.lower, self.shape)]

    def coords(self):
        """Coordinate arrays, each of shape ``self.shape``."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates with shape ``(*shape, d)``."""
        return np.stack(self.coords(), axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(-1, self.dim)

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.coords()))

    def sample(self, func, t: float = 0.0) -> "GridField":
        """Sample a callable ``func(points, t)`` at every node."""
        return GridField(self, np.asarray(func(self.points(), t), dtype=float))

    def refine(self) -> "Grid":
        return Grid(self.lower, tuple(2 * n for n in self.shape), self.h / 2)

    def boundary_mask(self, width: int = 1) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = slice(0, width)
            mask[tuple(sl)] = True
            sl[ax] = slice(-width, None)
            mask[tuple(sl)] = True
        return mask


def _axis_derivative(values: np.ndarray, axis: int, order: int, h: float) -> np.ndarray:
    offsets, weights, power = _STENCILS[order]
    out = np.zeros_like(values)
    for off, w in zip(offsets, weights):
        # f(x + off*h) sits at index i + off, i.e. roll by -off
        out += w * np.roll(values, -off, axis=axis)
    return out / h ** power


def derivative(values, alpha, h: float | None = None) -> np.ndarray:
    """Periodic fourth-order finite-difference ``D^alpha`` of lattice samples.

    ``values`` may be a :class:`GridField` (``h`` taken from it) or an array
    whose leading axes are the lattice axes.
    """
    if isinstance(values, GridField):
        h = values.grid.h
        values = values.values
    alpha = tuple(int(a) for a in alpha)
    if any(a < 0 for a in alpha):
        raise ValueError("multi-index entries must be nonnegative")
    if sum(alpha) > MAX_ORDER:
        raise ValueError(f"|alpha| = {sum(alpha)} exceeds the stencil limit {MAX_ORDER}")
    out = np.asarray(values, dtype=float)
    for axis, k in enumerate(alpha):
        if k:
            out = _axis_derivative(out, axis, k, h)
    return out if out is not values else out.copy()


def gradient(values: np.ndarray, h: float, dim: int | None = None) -> np.ndarray:
    """First derivatives along each lattice axis, stacked on a new leading axis."""
    dim = values.ndim if dim is None else dim
    return np.stack([_axis_derivative(values, ax, 1, h) for ax in range(dim)])


def wavenumbers(grid: Grid):
    return np.meshgrid(
        *[2 * np.pi * np.fft.fftfreq(n, grid.h) for n in grid.shape], indexing="ij"
    )


def sobolev_norm(u, m: float, grid: Grid | None = None) -> float:
    """Spectral ``H^m`` norm on the periodic box.

    ``||u||^2 = (h^d / N) sum_xi (1 + |xi|^2)^m |u_hat(xi)|^2`` with physical
    wavenumbers, which reduces to the lattice ``L2`` norm for ``m = 0``.
    """
    if isinstance(u, GridField):
        grid, u = u.grid, u.values
    u = np.asarray(u, dtype=float)
    if m == 0:
        return float(np.sqrt(grid.cell_volume * np.sum(u * u)))
    uh = np.fft.fftn(u)
    xi2 = sum(k * k for k in wavenumbers(grid))
    weight = (1.0 + xi2) ** m
    return float(np.sqrt(grid.cell_volume / u.size * np.sum(weight * np.abs(uh) ** 2)))


def interpolate(values: np.ndarray, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Periodic tensor cubic-spline interpolation at arbitrary points ``(..., d)``."""
    points = np.asarray(points, dtype=float)
    lead = points.shape[:-1]
    pts = points.reshape(-1, grid.dim)
    idx = [(pts[:, ax] - grid.lower[ax]) / grid.h for ax in range(grid.dim)]
    out = ndimage.map_coordinates(
        np.asarray(values, dtype=float), idx, order=3, mode="grid-wrap", prefilter=True
    )
    return out.reshape(lead)


@dataclass
class GridField:
    """Scalar samples on a :class:`Grid` (array shape equals ``grid.shape``)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"samples have shape {self.values.shape}, grid is {self.grid.shape}")

    def derivative(self, alpha) -> "GridField":
        return GridField(self.grid, derivative(self.values, alpha, self.grid.h))

    def norm(self, m: float = 0.0) -> float:
        return sobolev_norm(self.values, m, self.grid)

    def at(self, points) -> np.ndarray:
        return interpolate(self.values, self.grid, points)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))
