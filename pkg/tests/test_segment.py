from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvsde.errors import InvalidInputError
from mvsde.segment import (
    SegmentBatch,
    SegmentPath,
    TimeGrid,
    Trajectory,
    extract_segment,
    read_trajectory_csv,
    segment_sup_distance,
    uniform_norm,
    write_trajectory_csv,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_grid_counts_nodes():
    g = TimeGrid(0.1, 0.3, 1.0)
    assert (g.n_r, g.n_T, g.window, g.n_nodes) == (3, 10, 4, 14)
    assert g.times()[0] == pytest.approx(-0.3)
    assert g.times()[-1] == pytest.approx(1.0)
    assert g.step_index(0.5) == 5


def test_grid_rejects_non_multiple_delay():
    with pytest.raises(InvalidInputError, match="0.3"):
        TimeGrid(0.3, 1.0, 3.0)


def test_grid_rejects_off_grid_time():
    with pytest.raises(InvalidInputError):
        TimeGrid(0.1, 0.2, 1.0).step_index(0.05)


def test_uniform_norm_of_zero_segment():
    g = TimeGrid(0.5, 1.0, 1.0)
    assert uniform_norm(SegmentPath(g, 0.0, np.zeros((3, 1)))) == 0.0


def test_uniform_norm_takes_largest_absolute_value():
    g = TimeGrid(0.5, 1.0, 1.0)
    assert uniform_norm(SegmentPath(g, 0.0, [-3.0, 1.0, 2.0])) == 3.0


def test_uniform_norm_of_constant_vector_segment():
    g = TimeGrid(0.5, 1.0, 1.0)
    assert uniform_norm(SegmentPath(g, 0.0, np.tile([1.0, 2.0], (3, 1)))) == pytest.approx(math.sqrt(5.0), rel=1e-15)


def test_extract_segment_at_zero_is_initial_window():
    g = TimeGrid(0.25, 0.5, 1.0)
    traj = Trajectory(g, np.arange(g.n_nodes, dtype=float))
    seg = extract_segment(traj, 0.0)
    np.testing.assert_array_equal(seg.values[:, 0], [0.0, 1.0, 2.0])
    assert seg.values.shape == traj.initial_segment().values.shape


def test_extract_segment_indexes_window():
    # path with value k at time k h, delay 2h, read at t = 4h
    h = 0.1
    g = TimeGrid(h, 2 * h, 6 * h)
    values = np.arange(-2, g.n_T + 1, dtype=float)
    seg = extract_segment(Trajectory(g, values), 4 * h)
    np.testing.assert_array_equal(seg.values[:, 0], [2.0, 3.0, 4.0])


def test_extract_segment_at_horizon_is_final_window():
    g = TimeGrid(0.1, 0.2, 0.5)
    traj = Trajectory(g, np.arange(g.n_nodes, dtype=float))
    np.testing.assert_array_equal(extract_segment(traj, 0.5).values[:, 0], traj.values[-3:, 0])


def test_sup_distance_examples():
    g = TimeGrid(0.5, 1.0, 1.0)
    a = SegmentPath(g, 0.0, [0.0, 0.0, 0.0])
    b = SegmentPath(g, 0.0, [1.0, -2.0, 1.0])
    assert segment_sup_distance(a, a) == 0.0
    assert segment_sup_distance(a, b) == 2.0
    c = SegmentPath(g, 0.0, np.full((3, 1), 0.75))
    assert segment_sup_distance(a, c) == 0.75


def test_segment_interpolates_linearly():
    g = TimeGrid(0.5, 1.0, 1.0)
    seg = SegmentPath(g, 0.0, [0.0, 1.0, 3.0])
    np.testing.assert_allclose(seg([-1.0, -0.75, -0.25, 0.0])[:, 0], [0.0, 0.5, 2.0, 3.0])


def test_segment_batch_views():
    nodes = np.arange(24, dtype=float).reshape(3, 4, 2)
    batch = SegmentBatch(nodes)
    assert (len(batch), batch.n_nodes, batch.dim) == (4, 3, 2)
    np.testing.assert_array_equal(batch.endpoint, nodes[-1])
    np.testing.assert_array_equal(batch.delayed, nodes[0])
    np.testing.assert_array_equal(batch.values, nodes.transpose(1, 0, 2))
    shifted = batch.shifted(np.ones((3, 2)))
    np.testing.assert_array_equal(shifted.endpoint, nodes[-1] + 1.0)
    np.testing.assert_array_equal(batch.rows(1, 3).endpoint, nodes[-1, 1:3])


def test_trajectory_csv_round_trip(tmp_path):
    g = TimeGrid(0.1, 0.2, 0.5)
    traj = Trajectory(g, np.random.default_rng(0).normal(size=(g.n_nodes, 2)))
    write_trajectory_csv(tmp_path / "p.csv", traj)
    back = read_trajectory_csv(tmp_path / "p.csv", 0.2)
    np.testing.assert_allclose(back.values, traj.values, rtol=1e-11, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 2), elements=finite), arrays(np.float64, (5, 2), elements=finite))
def test_sup_distance_is_a_metric(a, b):
    g = TimeGrid(0.25, 1.0, 1.0)
    sa, sb = SegmentPath(g, 0.0, a), SegmentPath(g, 0.0, b)
    d = segment_sup_distance(sa, sb)
    assert d >= 0.0
    assert d == segment_sup_distance(sb, sa)
    zero = SegmentPath(g, 0.0, np.zeros((5, 2)))
    assert d <= uniform_norm(sa) + uniform_norm(sb) + 1e-9 * (1 + d)
    assert segment_sup_distance(sa, zero) == pytest.approx(uniform_norm(sa))
