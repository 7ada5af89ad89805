import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wentzell.grid import Grid, GridField, derivative, gradient, interpolate, sobolev_norm


def mode_grid(n=32):
    return Grid.box([-1.0, -1.0], [1.0, 1.0], 2.0 / n)


def test_box_shape_and_points():
    g = Grid.box([-1, 0], [1, 0.5], 0.25)
    assert g.shape == (8, 2)
    assert g.points().shape == (8, 2, 2)
    np.testing.assert_allclose(g.points()[0, 0], [-1.0, 0.0])
    assert g.cell_volume == pytest.approx(0.0625)


def test_box_rejects_nondividing_step():
    with pytest.raises(ValueError):
        Grid.box([0.0], [1.0], 0.3)


def test_cube_side_is_four_radii():
    g = Grid.cube(0.5, 2, 1 / 16)
    assert g.shape == (32, 32)
    np.testing.assert_allclose(g.lower, (-1.0, -1.0))


def test_refine_halves_step():
    g = mode_grid(16).refine()
    assert g.shape == (32, 32) and g.h == pytest.approx(1 / 16)


def test_boundary_mask_counts():
    g = mode_grid(8)
    assert g.boundary_mask().sum() == 64 - 36


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_derivative_of_mode_is_fourth_order(order):
    errs = []
    for n in (32, 64):
        g = mode_grid(n)
        x = g.coords()[0]
        u = np.sin(math.pi * x)
        exact = math.pi**order * np.sin(math.pi * x + order * math.pi / 2)
        errs.append(np.abs(derivative(u, (order, 0), g.h) - exact).max())
    assert math.log2(errs[0] / errs[1]) > 3.8


def test_mixed_derivative():
    g = mode_grid(64)
    x, y = g.coords()
    u = np.sin(math.pi * x) * np.cos(math.pi * y)
    exact = -(math.pi**2) * np.cos(math.pi * x) * np.sin(math.pi * y)
    np.testing.assert_allclose(derivative(u, (1, 1), g.h), exact, atol=1e-4)


def test_derivative_rejects_high_order():
    with pytest.raises(ValueError, match="stencil limit"):
        derivative(np.zeros((8, 8)), (3, 2), 0.1)


def test_gradient_stacks_axes():
    g = mode_grid(16)
    x, y = g.coords()
    grad = gradient(2 * x + 0 * y, g.h)
    assert grad.shape == (2, 16, 16)
    # linear profile is exact away from the periodic seam
    np.testing.assert_allclose(grad[0, 3:-3], 2.0, atol=1e-12)
    np.testing.assert_allclose(grad[1], 0.0, atol=1e-12)


def test_sobolev_norm_of_mode():
    # ||sin(pi x)||^2_{H^m} on [-1,1)^2 is 2 (1 + pi^2)^m
    g = mode_grid(32)
    u = np.sin(math.pi * g.coords()[0])
    for m in (0, 1, 2, 4, -2, 0.5):
        assert sobolev_norm(u, m, g) == pytest.approx(math.sqrt(2 * (1 + math.pi**2) ** m), rel=1e-12)


def test_sobolev_zero_matches_l2():
    g = mode_grid(16)
    u = np.random.default_rng(0).normal(size=g.shape)
    assert sobolev_norm(u, 0, g) == pytest.approx(sobolev_norm(u, 1e-300, g), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3))
def test_sobolev_norm_monotone_in_order(a, b, dm):
    g = mode_grid(16)
    x, y = g.coords()
    u = a * np.sin(math.pi * x) + b * np.cos(2 * math.pi * y) + 0.5
    m = -1.0
    assert sobolev_norm(u, m, g) <= sobolev_norm(u, m + dm, g) * (1 + 1e-12)


def test_interpolate_reproduces_nodes_and_smooth_values():
    g = mode_grid(64)
    x, y = g.coords()
    u = np.sin(math.pi * x) * np.cos(math.pi * y)
    np.testing.assert_allclose(interpolate(u, g, g.points()), u, atol=1e-12)
    pts = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    exact = np.sin(math.pi * pts[:, 0]) * np.cos(math.pi * pts[:, 1])
    np.testing.assert_allclose(interpolate(u, g, pts), exact, atol=1e-5)


def test_interpolate_wraps_periodically():
    g = mode_grid(32)
    u = np.sin(math.pi * g.coords()[0])
    p = np.array([[0.3, 0.1]])
    np.testing.assert_allclose(interpolate(u, g, p), interpolate(u, g, p + [2.0, -2.0]), atol=1e-12)


def test_gridfield_api():
    g = mode_grid(16)
    f = g.sample(lambda p, t: np.sin(math.pi * p[..., 0]))
    assert isinstance(f, GridField) and f.is_finite()
    assert f.norm(0) == pytest.approx(math.sqrt(2))
    assert f.derivative((1, 0)).values.shape == g.shape
    with pytest.raises(ValueError):
        GridField(g, np.zeros((3, 3)))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([(1, 0), (0, 2), (1, 1), (2, 2)]))
def test_derivative_is_linear(a, b, alpha):
    rng = np.random.default_rng(5)
    u, v = rng.normal(size=(2, 16, 16))
    lhs = derivative(a * u + b * v, alpha, 0.1)
    rhs = a * derivative(u, alpha, 0.1) + b * derivative(v, alpha, 0.1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))
