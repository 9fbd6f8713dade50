"""Tests for planar geometry kernels, checked against shapely."""

import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon

from replay_engine.sim.geometry import (
    box_corners,
    box_distance,
    boxes_overlap,
    point_segment_distance,
    points_in_polygons,
    polyline_arclength,
    resample_polyline,
    segments_intersect,
    to_local_frame,
    wrap_angle,
)


def _random_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    return box_corners(
        rng.uniform(-6, 6, n), rng.uniform(-6, 6, n), rng.uniform(-np.pi, np.pi, n),
        rng.uniform(1, 6, n), rng.uniform(0.5, 3, n),
    )


class TestBoxes:
    """Test oriented boxes and separating-axis overlap."""

    def test_corners_axis_aligned(self):
        """Test corners of an unrotated box."""
        corners = box_corners(0.0, 0.0, 0.0, 4.0, 2.0)
        expected = [[2, -1], [2, 1], [-2, 1], [-2, -1]]
        np.testing.assert_allclose(corners, expected, atol=1e-12)

    def test_corners_rotated(self):
        """Test a quarter turn swaps length and width axes."""
        corners = box_corners(1.0, 1.0, np.pi / 2, 4.0, 2.0)
        np.testing.assert_allclose(corners[0], [2.0, 3.0], atol=1e-12)

    def test_overlap_matches_shapely(self):
        """Test overlap agrees with polygon intersection."""
        rng = np.random.default_rng(0)
        a, b = _random_boxes(rng, 300), _random_boxes(rng, 300)
        ours = boxes_overlap(a, b)
        oracle = [Polygon(pa).intersects(Polygon(pb)) for pa, pb in zip(a, b)]
        np.testing.assert_array_equal(ours, oracle)
        assert ours.any() and not ours.all()

    def test_distance_matches_shapely(self):
        """Test box distance agrees with polygon distance."""
        rng = np.random.default_rng(1)
        a, b = _random_boxes(rng, 200), _random_boxes(rng, 200)
        oracle = [Polygon(pa).distance(Polygon(pb)) for pa, pb in zip(a, b)]
        np.testing.assert_allclose(box_distance(a, b), oracle, atol=1e-9)

    def test_parallel_gap(self):
        """Test parallel 2 x 4 boxes 3 m apart leave a 1 m gap."""
        a = box_corners(0.0, 0.0, 0.0, 4.0, 2.0)
        b = box_corners(0.0, 3.0, 0.0, 4.0, 2.0)
        assert box_distance(a, b) == pytest.approx(1.0)
        assert not boxes_overlap(a, b)

    def test_broadcast(self):
        """Test one box against many."""
        ego = box_corners(0.0, 0.0, 0.0, 4.5, 1.9)
        others = box_corners(np.array([0.0, 10.0, 3.0]), 0.0, 0.0, 4.0, 2.0)
        np.testing.assert_array_equal(boxes_overlap(ego, others), [True, False, True])


class TestPolylines:
    """Test polyline helpers."""

    def test_point_segment_distance(self):
        """Test distances to the segment interior and its endpoints."""
        a, b = np.array([0.0, 0.0]), np.array([10.0, 0.0])
        points = np.array([[5.0, 2.0], [-3.0, 4.0], [12.0, 0.0]])
        np.testing.assert_allclose(point_segment_distance(points, a, b), [2.0, 5.0, 2.0])

    def test_point_segment_distance_matches_shapely(self):
        """Test against shapely on random segments."""
        rng = np.random.default_rng(2)
        p, a, b = rng.normal(size=(3, 100, 2))
        oracle = [LineString([sa, sb]).distance(Point(sp)) for sp, sa, sb in zip(p, a, b)]
        np.testing.assert_allclose(point_segment_distance(p, a, b), oracle, atol=1e-12)

    def test_segments_intersect_matches_shapely(self):
        """Test segment intersection against shapely."""
        rng = np.random.default_rng(3)
        p1, p2, q1, q2 = rng.normal(size=(4, 300, 2))
        oracle = [LineString([a, b]).intersects(LineString([c, d])) for a, b, c, d in zip(p1, p2, q1, q2)]
        np.testing.assert_array_equal(segments_intersect(p1, p2, q1, q2), oracle)

    def test_touching_segments(self):
        """Test segments sharing an endpoint intersect."""
        o = np.array([0.0, 0.0])
        assert segments_intersect(o, np.array([1.0, 0.0]), o, np.array([0.0, 1.0]))

    def test_points_in_polygon_matches_shapely(self):
        """Test even-odd containment in a concave polygon."""
        polygon = np.array([[0, 0], [6, 0], [6, 6], [3, 2], [0, 6]], dtype=float)
        rng = np.random.default_rng(4)
        points = rng.uniform(-1, 7, size=(400, 2))
        inside = points_in_polygons(
            points, polygon, np.roll(polygon, -1, axis=0), np.zeros(len(polygon), dtype=np.int64), 1
        )
        shape = Polygon(polygon)
        oracle = [shape.contains(Point(p)) for p in points]
        np.testing.assert_array_equal(inside[:, 0], oracle)

    def test_arclength_and_resample(self):
        """Test arc length and uniform resampling keep endpoints."""
        line = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]])
        np.testing.assert_allclose(polyline_arclength(line), [0.0, 3.0, 7.0])
        pts = resample_polyline(line, 1.0)
        assert len(pts) == 8
        np.testing.assert_allclose(pts[0], line[0])
        np.testing.assert_allclose(pts[-1], line[-1])
        np.testing.assert_allclose(np.linalg.norm(np.diff(pts, axis=0), axis=1), 1.0)


class TestFrames:
    """Test angles and local frames."""

    def test_wrap_angle(self):
        """Test wrapping into (-pi, pi]."""
        np.testing.assert_allclose(wrap_angle(np.array([2.5 * np.pi, -1.5 * np.pi, 0.5])), [np.pi / 2, np.pi / 2, 0.5])
        assert wrap_angle(np.pi) == pytest.approx(np.pi)

    def test_local_frame(self):
        """Test a point ahead of a heading-pi/2 pose lands on the x axis."""
        local = to_local_frame(np.array(0.0), np.array(5.0), 0.0, 0.0, np.pi / 2)
        np.testing.assert_allclose(local, [5.0, 0.0], atol=1e-12)
