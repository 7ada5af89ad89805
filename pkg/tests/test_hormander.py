import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wentzell.fields import ExprField, VectorFieldSet
from wentzell.hormander import HullOverflow, ball_nodes, check_condition, generate_hull, rank_at


def field_set(d, gens, R0=1.0):
    return VectorFieldSet.build(d, 0, len(gens), [["0"] * d] + gens, R0=R0, cutoff=False)


HEISENBERG = field_set(3, [["1", "0", "0"], ["0", "1", "x1"]])
GRUSHIN = field_set(2, [["1", "0"], ["0", "x1"]])
ELLIPTIC = field_set(2, [["1", "0.2*sin(x2)"], ["0", "1"]])
RANKDEF = field_set(3, [["1", "0", "0"], ["0", "1", "0"]])


def test_hull_sizes_for_two_generators():
    hull = generate_hull(HEISENBERG, 5)
    # each level brackets both generators with every member new at the previous level
    assert hull.sizes() == [2, 3, 5, 9, 17, 33]


def test_hull_skips_self_and_mirror_brackets():
    hull = generate_hull(HEISENBERG, 2)
    labels = hull.labels()
    assert "[s1,s1]" not in labels and "[s2,s2]" not in labels
    assert labels[2] == "[s1,s2]"
    assert "[s2,s1]" not in labels
    assert len(set(labels)) == len(labels)


def test_hull_excludes_drift():
    fs = VectorFieldSet.build(2, 0, 1, [["0", "-x1"], ["1", "0"]], cutoff=False)
    hull = generate_hull(fs, 3)
    assert hull.labels() == ["s1"]


def test_hull_cap():
    with pytest.raises(HullOverflow):
        generate_hull(HEISENBERG, 8, cap=50)


def test_hull_needs_generators():
    with pytest.raises(ValueError):
        generate_hull([], 2)


def test_rank_at_heisenberg():
    hull = generate_hull(HEISENBERG, 1)
    r, s = rank_at(hull, [0.2, -0.3, 0.1])
    assert r == 3 and s.shape == (3,)
    assert rank_at(hull, [0.2, -0.3, 0.1], n=0)[0] == 2


def test_rank_at_batch():
    hull = generate_hull(GRUSHIN, 1)
    pts = np.array([[0.0, 0.5], [0.3, 0.5]])
    ranks, _ = rank_at(hull, pts, n=0)
    assert list(ranks) == [1, 2]


def test_heisenberg_fixture():
    rep = check_condition(HEISENBERG, 1.0, nodes_per_axis=5, n_max=3)
    assert rep.ok and rep.global_n == 1
    assert np.all(rep.minimal_n == 1) and np.all(rep.rank == 3)


def test_elliptic_fixture():
    rep = check_condition(ELLIPTIC, 1.0, nodes_per_axis=9)
    assert rep.global_n == 0


def test_grushin_fixture():
    rep = check_condition(GRUSHIN, 1.0, nodes_per_axis=9, n_max=3)
    assert np.any(rep.points[:, 0] == 0.0)
    assert rep.global_n == 1
    on_axis = rep.points[:, 0] == 0.0
    assert np.all(rep.minimal_n[0, on_axis] == 1) and np.all(rep.minimal_n[0, ~on_axis] == 0)


def test_rank_deficient_fixture():
    rep = check_condition(RANKDEF, 1.0, nodes_per_axis=5, n_max=5)
    assert not rep.ok and rep.global_n is None
    assert np.all(rep.rank_by_depth == 2)
    assert len(rep.failures()) == rep.points.shape[0]


def test_time_window_nodes():
    fs = VectorFieldSet.build(2, 0, 2, [["0", "0"], ["1", "0"], ["0", "t"]], cutoff=False)
    rep = check_condition(fs, 0.5, window=(0.0, 1.0), time_nodes=3, nodes_per_axis=3)
    # the second field vanishes at t = 0 and its bracket with (1, 0) vanishes for all t
    assert list(rep.minimal_n[:, 0]) == [-1, 0, 0]


def test_radius_above_R0_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        check_condition(GRUSHIN, 1.5)


def test_report_csv(tmp_path):
    rep = check_condition(GRUSHIN, 1.0, nodes_per_axis=3)
    path = tmp_path / "h.csv"
    rep.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2", "minimal_n", "rank", "s_1", "s_2"]
    assert len(rows) == 1 + rep.points.shape[0]


def test_ball_nodes_inside_ball():
    pts = ball_nodes(3, 0.7, 5)
    assert np.all(np.linalg.norm(pts, axis=1) <= 0.7 + 1e-12)
    assert any(np.allclose(p, 0) for p in pts)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 3))
def test_rank_invariant_under_scaling_generators(x, y, lam):
    a = ExprField(["1", "0"], label="a")
    b = ExprField(["0", f"{lam!r}*x1"], label="b")
    r1 = rank_at(generate_hull([a, b], 1), [x, y])[0]
    r2 = rank_at(generate_hull(GRUSHIN, 1), [x, y])[0]
    assert r1 == r2 == 2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 5))
def test_minimal_depth_is_monotone(n_extra):
    rep = check_condition(HEISENBERG, 1.0, nodes_per_axis=3, n_max=1 + n_extra)
    assert np.all(np.diff(rep.rank_by_depth, axis=0) >= 0)
