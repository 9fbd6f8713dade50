"""Vectorized planar geometry: oriented boxes, separating-axis tests, polylines."""

import numpy as np

# Unit box in (forward, left) coordinates, counter-clockwise from front-right.
_UNIT_CORNERS = np.array([[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]])


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def box_corners(
    x: np.ndarray,
    y: np.ndarray,
    heading: np.ndarray,
    length: np.ndarray,
    width: np.ndarray,
) -> np.ndarray:
    """Corners of oriented rectangles centered at (x, y).

    All arguments broadcast against each other.

    Returns:
        Array of shape (..., 4, 2), counter-clockwise
    """
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (x, y, heading, length, width))
    )
    c = np.cos(heading)[..., None]
    s = np.sin(heading)[..., None]
    fwd = _UNIT_CORNERS[:, 0] * length[..., None]
    left = _UNIT_CORNERS[:, 1] * width[..., None]
    cx = x[..., None] + fwd * c - left * s
    cy = y[..., None] + fwd * s + left * c
    return np.stack([cx, cy], axis=-1)


def _edge_normals(corners: np.ndarray) -> np.ndarray:
    """Two unnormalized edge normals of a rectangle; the other two are parallel."""
    edges = corners[..., 1:3, :] - corners[..., 0:2, :]
    return np.stack([-edges[..., 1], edges[..., 0]], axis=-1)


def boxes_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Separating-axis overlap test between rectangles; touching counts as overlap.

    Args:
        corners_a: (..., 4, 2) rectangle corners
        corners_b: (..., 4, 2), broadcastable against corners_a

    Returns:
        Boolean array of the broadcast leading shape
    """
    corners_a, corners_b = np.broadcast_arrays(corners_a, corners_b)
    axes = np.concatenate([_edge_normals(corners_a), _edge_normals(corners_b)], axis=-2)
    proj_a = np.einsum("...ck,...ak->...ac", corners_a, axes)
    proj_b = np.einsum("...ck,...ak->...ac", corners_b, axes)
    separated = (proj_a.max(axis=-1) < proj_b.min(axis=-1)) | (
        proj_b.max(axis=-1) < proj_a.min(axis=-1)
    )
    return ~separated.any(axis=-1)


def point_segment_distance(
    points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray
) -> np.ndarray:
    """Euclidean distance from points to segments, broadcasting leading dims."""
    ab = seg_b - seg_a
    ap = points - seg_a
    denom = np.einsum("...k,...k->...", ab, ab)
    t = np.where(denom > 0, np.einsum("...k,...k->...", ap, ab) / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = seg_a + t[..., None] * ab
    return np.linalg.norm(points - foot, axis=-1)


def box_distance(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Minimum distance between rectangles, 0 where they overlap.

    Args:
        corners_a: (..., 4, 2)
        corners_b: (..., 4, 2), broadcastable against corners_a
    """
    corners_a, corners_b = np.broadcast_arrays(corners_a, corners_b)

    def vertex_to_edges(verts: np.ndarray, poly: np.ndarray) -> np.ndarray:
        a = poly[..., None, :, :]
        b = np.roll(poly, -1, axis=-2)[..., None, :, :]
        d = point_segment_distance(verts[..., :, None, :], a, b)
        return d.min(axis=(-1, -2))

    dist = np.minimum(vertex_to_edges(corners_a, corners_b), vertex_to_edges(corners_b, corners_a))
    return np.where(boxes_overlap(corners_a, corners_b), 0.0, dist)


def points_in_polygons(
    points: np.ndarray,
    edge_a: np.ndarray,
    edge_b: np.ndarray,
    edge_owner: np.ndarray,
    num_polygons: int,
) -> np.ndarray:
    """Even-odd ray casting of many points against a set of polygons.

    Leading batch dimensions (...) are shared by all arguments.

    Args:
        points: (..., P, 2) query points
        edge_a, edge_b: (..., E, 2) edge endpoints of all polygons, concatenated
        edge_owner: (..., E) polygon index per edge, -1 for padding edges
        num_polygons: Number of polygons K

    Returns:
        (..., P, K) boolean containment matrix
    """
    px = points[..., :, None, 0]
    py = points[..., :, None, 1]
    xa, ya = edge_a[..., None, :, 0], edge_a[..., None, :, 1]
    xb, yb = edge_b[..., None, :, 0], edge_b[..., None, :, 1]
    straddles = (ya > py) != (yb > py)
    dy = np.where(straddles, yb - ya, 1.0)
    x_cross = xa + (py - ya) * (xb - xa) / dy
    crossing = straddles & (px < x_cross) & (edge_owner[..., None, :] >= 0)
    owner_onehot = (edge_owner[..., :, None] == np.arange(num_polygons)).astype(np.int64)
    counts = crossing.astype(np.int64) @ owner_onehot
    return (counts % 2) == 1


def segments_intersect(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Proper or touching intersection of segments p1-p2 and q1-q2 (broadcasting)."""

    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_segment(a, b, c):
        return (
            (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
        )

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    general = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    collinear = (
        ((o1 == 0) & on_segment(p1, p2, q1))
        | ((o2 == 0) & on_segment(p1, p2, q2))
        | ((o3 == 0) & on_segment(q1, q2, p1))
        | ((o4 == 0) & on_segment(q1, q2, p2))
    )
    return general | collinear


def polyline_arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(points: np.ndarray, spacing: float) -> np.ndarray:
    """Points at roughly uniform spacing along a polyline, endpoints kept."""
    points = np.asarray(points, dtype=np.float64)
    arc = polyline_arclength(points)
    total = arc[-1]
    if total <= 0:
        return points[:1].copy()
    count = max(int(np.ceil(total / spacing)), 1) + 1
    targets = np.linspace(0.0, total, count)
    return np.stack([np.interp(targets, arc, points[:, 0]), np.interp(targets, arc, points[:, 1])], axis=1)


def to_local_frame(
    px: np.ndarray, py: np.ndarray, ox: np.ndarray, oy: np.ndarray, heading: np.ndarray
) -> np.ndarray:
    """Rotate by -heading and translate by -origin; returns (..., 2)."""
    dx = px - ox
    dy = py - oy
    c = np.cos(heading)
    s = np.sin(heading)
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)
