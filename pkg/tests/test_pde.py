import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import wentzell.pde as pde
from wentzell.errors import NumericalAbort, ValidationError
from wentzell.fields import VectorFieldSet
from wentzell.flow import sample_path
from wentzell.grid import Grid, sobolev_norm
from wentzell.pde import (
    SpdeProblem,
    ito_wentzell_residual,
    norm_ledger,
    read_trajectory,
    relative_l2_gap,
    solve_direct,
    solve_reduced,
    write_trajectory,
)
from wentzell.runs import bump, level_paths
from wentzell.scenario import load_scenario
from wentzell.runs import twin_gaps

SCENARIOS = __import__("pathlib").Path(__file__).resolve().parent.parent / "scenarios"

GAUSS = "exp(-(x1^2 + x2^2)/(2*0.2^2))"


def heat(semi_implicit=True, dt=1e-4, T=0.1):
    fs = VectorFieldSet.build(2, 0, 1, [["0", "0"], ["1", "0"]], cutoff=False)
    g = Grid.box([-1, -1], [1, 1], 1 / 32)
    return SpdeProblem(fs, g, "sin(3.141592653589793*x1)", T, dt, semi_implicit=semi_implicit)


@pytest.mark.parametrize("semi", [True, False])
def test_heat_mode_decay(semi):
    prob = heat(semi)
    traj = solve_direct(prob, sample_path(0, 0, prob.T, prob.dt))
    exact = math.exp(-(math.pi**2) * prob.T / 2)
    ratio = sobolev_norm(traj.final, 0) / sobolev_norm(traj.values[0], 0, prob.grid)
    assert ratio == pytest.approx(exact, rel=1e-3)


def test_semi_implicit_and_explicit_agree():
    a = solve_direct(heat(True, 2e-4, 0.02), sample_path(0, 0, 0.02, 2e-4))
    b = solve_direct(heat(False, 2e-4, 0.02), sample_path(0, 0, 0.02, 2e-4))
    assert relative_l2_gap(a.final.values, b.final.values) < 1e-3


def test_mass_conservation_divergence_free():
    fs = VectorFieldSet.build(
        2, 1, 1, [["x2", "-x1"], ["0.3", "0"], ["0.2", "0.3"]], cutoff=False
    )
    g = Grid.box([-2, -2], [2, 2], 1 / 16)
    T = 0.2
    prob = SpdeProblem(fs, g, GAUSS, T, 1e-3, output_every=50)
    traj = solve_direct(prob, sample_path(3, 1, T, 1e-3))
    mass = traj.values.sum(axis=(1, 2)) * g.cell_volume
    assert np.abs(mass - mass[0]).max() <= 1e-8 * T * max(1.0, mass[0])


def test_heat_positivity():
    fs = VectorFieldSet.build(2, 0, 2, [["0", "0"], ["0.5", "0"], ["0", "0.5"]], cutoff=False)
    g = Grid.box([-2, -2], [2, 2], 1 / 16)
    prob = SpdeProblem(fs, g, GAUSS, 0.2, 1e-3, output_every=20)
    traj = solve_direct(prob, sample_path(0, 0, 0.2, 1e-3))
    assert traj.values.min() >= -1e-8


def test_problem_validation():
    fs = VectorFieldSet.build(2, 0, 1, [["0", "0"], ["1", "0"]], cutoff=False)
    with pytest.raises(ValidationError, match="grid.dt"):
        SpdeProblem(fs, Grid.box([-1, -1], [1, 1], 0.25), GAUSS, 0.1, 0.03).steps
    with pytest.raises(ValidationError):
        SpdeProblem(fs, Grid.box([-1], [1], 0.25), GAUSS, 0.1, 0.01)
    prob = SpdeProblem(fs, Grid.box([-1, -1], [1, 1], 0.25), GAUSS, 0.1, 0.01)
    with pytest.raises(ValidationError):
        solve_direct(prob, sample_path(0, 0, 0.1, 0.02))
    with pytest.raises(ValidationError, match="initial samples"):
        SpdeProblem(fs, prob.grid, np.zeros((3, 3)), 0.1, 0.01).initial()


def test_reduced_needs_vanishing_nu_and_g():
    fs = VectorFieldSet.build(2, 1, 1, [["0", "0"], ["0.3", "0"], ["1", "0"]], nu=["0.2"], cutoff=False)
    prob = SpdeProblem(fs, Grid.box([-1, -1], [1, 1], 0.25), GAUSS, 0.1, 0.01)
    with pytest.raises(ValidationError, match="nu"):
        solve_reduced(prob, sample_path(0, 1, 0.1, 0.01))


def test_growth_abort():
    fs = VectorFieldSet.build(2, 0, 0, [["0", "0"]], c="1e5", cutoff=False)
    prob = SpdeProblem(fs, Grid.box([-1, -1], [1, 1], 0.25), GAUSS, 0.1, 1e-3)
    with pytest.raises(NumericalAbort, match="step 1"):
        solve_direct(prob, sample_path(0, 0, 0.1, 1e-3))


def test_boundary_abort(monkeypatch):
    fs = VectorFieldSet.build(2, 0, 1, [["0", "0"], ["0.3", "0"]], R0=0.5)
    prob = SpdeProblem(fs, Grid.cube(0.5, 2, 1 / 8), GAUSS, 0.01, 1e-3)
    monkeypatch.setattr(pde, "BOUNDARY_ABORT", -1.0)
    with pytest.raises(NumericalAbort, match="boundary"):
        solve_direct(prob, sample_path(0, 0, 0.01, 1e-3))


def test_boundary_level_reported():
    fs = VectorFieldSet.build(2, 0, 1, [["0", "0"], ["0.3", "0"]], R0=0.5)
    prob = SpdeProblem(fs, Grid.cube(0.5, 2, 1 / 16), "exp(-(x1^2 + x2^2)/(2*0.1^2))", 0.05, 1e-3)
    traj = solve_direct(prob, sample_path(0, 0, 0.05, 1e-3))
    # dispersive ripples of the difference scheme, far below the abort level
    assert traj.info["boundary_max"] < 1e-10


def test_trajectory_round_trip(tmp_path):
    prob = heat(dt=1e-3, T=0.01)
    prob.output_every = 5
    traj = solve_direct(prob, sample_path(0, 0, 0.01, 1e-3))
    assert list(np.round(traj.times, 12)) == [0.0, 0.005, 0.01]
    path = tmp_path / "u.bin"
    write_trajectory(traj, path)
    assert path.read_bytes()[:4] == b"WFLD"
    back = read_trajectory(path, prob.grid)
    np.testing.assert_array_equal(back.values, traj.values)
    np.testing.assert_array_equal(back.times, traj.times)
    with pytest.raises(ValueError):
        read_trajectory(path, Grid.box([-1, -1], [1, 1], 0.25))


def test_trajectory_access_and_ledger():
    prob = heat(dt=1e-3, T=0.01)
    traj = solve_direct(prob, sample_path(0, 0, 0.01, 1e-3), record_all=True)
    assert len(traj.times) == 11
    assert traj.at(0.004).values.shape == prob.grid.shape
    with pytest.raises(ValueError):
        traj.at(0.0045)
    rows = norm_ledger(traj)
    assert len(rows) == 11 and len(rows[0]) == 8
    # H0 <= H1 <= H2 <= H4 <= H5
    assert all(np.all(np.diff(r[1:6]) >= 0) for r in rows)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 10.0))
def test_direct_solver_is_linear(lam):
    fs = VectorFieldSet.build(2, 1, 1, [["0.2*x2", "0"], ["0.3", "0.1*x1"], ["0.4", "0"]], cutoff=False)
    g = Grid.box([-2, -2], [2, 2], 0.25)
    p = sample_path(1, 1, 0.02, 1e-3)
    u0 = g.sample(lambda x, t: np.exp(-np.sum(x * x, axis=-1) / 0.5)).values
    a = solve_direct(SpdeProblem(fs, g, u0, 0.02, 1e-3), p)
    b = solve_direct(SpdeProblem(fs, g, lam * u0, 0.02, 1e-3), p)
    np.testing.assert_allclose(b.final.values, lam * a.final.values, rtol=1e-8, atol=1e-12 * lam)


def test_residual_with_zero_driving_fields():
    fs = VectorFieldSet.build(
        2, 1, 0, [["0", "0"], ["0", "0"]], c="0.5", nu=["0.3*x1"], f="x2*exp(-(x1^2 + x2^2)/0.02)", g=["0.2*exp(-(x1^2 + x2^2)/0.02)"], R0=0.5
    )
    g = Grid.cube(0.5, 2, 1 / 16)
    p = sample_path(2, 1, 0.02, 1e-3)
    u0 = "exp(-(x1^2 + x2^2)/(2*0.1^2))"
    traj = solve_direct(SpdeProblem(fs, g, u0, 0.02, 1e-3), p, record_all=True)
    tests = [bump((0, 0), 0.3), bump((0.2, -0.1), 0.25)]
    assert np.abs(ito_wentzell_residual(traj, p, fs, tests)).max() <= 1e-8


def test_residual_needs_every_step():
    prob = heat(dt=1e-3, T=0.01)
    p = sample_path(0, 0, 0.01, 1e-3)
    with pytest.raises(ValueError):
        ito_wentzell_residual(solve_direct(prob, p), p, prob.fields, [bump((0, 0), 0.3)])


def test_constant_transport_residual_shrinks():
    sc = load_scenario(SCENARIOS / "constant_transport.scn")
    from wentzell.runs import residual_levels

    sc.residual["levels"] = [[0.0625, 0.002], [0.03125, 0.0005]]
    res = [np.abs(r["residuals"]).max() for r in residual_levels(sc, 3)]
    assert res[1] < res[0] / 2


def test_twin_gap_shrinks_on_first_refinement():
    sc = load_scenario(SCENARIOS / "twin_elliptic.scn")
    levels = [(0.0625, 0.0016), (0.03125, 0.0004)]
    out = twin_gaps(sc, 1, levels)
    assert out[1]["gaps"][-1] < out[0]["gaps"][-1] < 0.1
    info = out[1]["reduced"].info
    assert info["method"] == "reduced" and 0 < info["min_singular_value"] <= 1.5


def test_level_paths_are_nested():
    paths = level_paths(4, 1, 0.032, [(0, 0.0016), (0, 0.0004), (0, 0.0001)])
    assert [p.steps for p in paths] == [20, 80, 320]
    np.testing.assert_allclose(paths[2].w[::16], paths[0].w, atol=1e-15)
