"""Route-frame geometry: projection into (s, d), corridor containment and map queries.

Single-scene functions (project, footprint_on_route, nearest_features, stop_info)
wrap batched kernels that operate on frames stacked and padded along a leading
batch axis, so the simulator answers the same questions for all scenarios at once.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from replay_engine.data.scenario import LightState, RoadFeature, Route, StopLine, TrafficLight
from replay_engine.sim.geometry import box_corners, points_in_polygons, polyline_arclength, resample_polyline

logger = logging.getLogger(__name__)

_NO_LANE = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class RouteProjection:
    """A point expressed in route coordinates."""

    s: float
    d: float
    lane_id: int
    in_corridor: bool


@dataclass(frozen=True, eq=False)
class RouteFrame:
    """Per-lane midpoint centerlines with route arc length at every vertex.

    Lanes are ordered by lane_id. Each lane's own arc length maps linearly onto
    its valid interval [s_start, s_end].
    """

    lane_ids: np.ndarray
    s_start: np.ndarray
    s_end: np.ndarray
    centerlines: Tuple[np.ndarray, ...]
    vertex_s: Tuple[np.ndarray, ...]
    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_lane: np.ndarray
    seg_s0: np.ndarray
    seg_s1: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_owner: np.ndarray
    border_points: np.ndarray
    border_left: np.ndarray
    border_lane: np.ndarray
    route_length: float

    @classmethod
    def from_route(cls, route: Route, point_spacing: Optional[float] = None) -> "RouteFrame":
        """Build the frame of a validated route.

        Args:
            route: Route with paired left/right borders per lane
            point_spacing: Resampling distance for the border point cloud;
                None keeps the original border vertices
        """
        lanes = sorted(route.lanes, key=lambda lane: lane.lane_id)
        centerlines, vertex_s = [], []
        seg_a, seg_b, seg_lane, seg_s0, seg_s1 = [], [], [], [], []
        edge_a, edge_b, edge_owner = [], [], []
        border_points, border_left, border_lane = [], [], []

        for k, lane in enumerate(lanes):
            left = np.asarray(lane.left_border, dtype=np.float64)
            right = np.asarray(lane.right_border, dtype=np.float64)
            center = 0.5 * (left + right)
            arc = polyline_arclength(center)
            s0, s1 = float(lane.valid_interval[0]), float(lane.valid_interval[1])
            s = s0 + (arc / arc[-1]) * (s1 - s0)
            centerlines.append(center)
            vertex_s.append(s)

            seg_a.append(center[:-1])
            seg_b.append(center[1:])
            seg_lane.append(np.full(len(center) - 1, k))
            seg_s0.append(s[:-1])
            seg_s1.append(s[1:])

            # Lane corridor polygon: left border forward, right border back
            polygon = np.concatenate([left, right[::-1]])
            edge_a.append(polygon)
            edge_b.append(np.roll(polygon, -1, axis=0))
            edge_owner.append(np.full(len(polygon), k))

            for border, is_left in ((left, True), (right, False)):
                pts = border if point_spacing is None else resample_polyline(border, point_spacing)
                border_points.append(pts)
                border_left.append(np.full(len(pts), is_left))
                border_lane.append(np.full(len(pts), k))

        return cls(
            lane_ids=np.array([lane.lane_id for lane in lanes], dtype=np.int64),
            s_start=np.array([lane.valid_interval[0] for lane in lanes], dtype=np.float64),
            s_end=np.array([lane.valid_interval[1] for lane in lanes], dtype=np.float64),
            centerlines=tuple(centerlines),
            vertex_s=tuple(vertex_s),
            seg_a=np.concatenate(seg_a),
            seg_b=np.concatenate(seg_b),
            seg_lane=np.concatenate(seg_lane).astype(np.int64),
            seg_s0=np.concatenate(seg_s0),
            seg_s1=np.concatenate(seg_s1),
            edge_a=np.concatenate(edge_a),
            edge_b=np.concatenate(edge_b),
            edge_owner=np.concatenate(edge_owner).astype(np.int64),
            border_points=np.concatenate(border_points),
            border_left=np.concatenate(border_left),
            border_lane=np.concatenate(border_lane).astype(np.int64),
            route_length=float(max(lane.valid_interval[1] for lane in lanes)),
        )

    @property
    def num_lanes(self) -> int:
        return len(self.lane_ids)

    def point_at(self, s: float, lane_id: Optional[int] = None) -> Tuple[float, float, float]:
        """Cartesian (x, y, heading) of the centerline point at route position s.

        Args:
            s: Route arc length, clamped to [0, route_length]
            lane_id: Lane to use; defaults to the lowest lane valid at s
        """
        s = float(np.clip(s, 0.0, self.route_length))
        if lane_id is None:
            valid = np.flatnonzero((self.s_start <= s) & (s <= self.s_end))
            if valid.size == 0:
                raise ValueError(f"no lane valid at s={s}")
            k = int(valid[0])
        else:
            matches = np.flatnonzero(self.lane_ids == lane_id)
            if matches.size == 0:
                raise ValueError(f"unknown lane id {lane_id}")
            k = int(matches[0])
        center, vs = self.centerlines[k], self.vertex_s[k]
        x = float(np.interp(s, vs, center[:, 0]))
        y = float(np.interp(s, vs, center[:, 1]))
        seg = int(np.clip(np.searchsorted(vs, s, side="right") - 1, 0, len(center) - 2))
        direction = center[seg + 1] - center[seg]
        return x, y, float(np.arctan2(direction[1], direction[0]))


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    """Road features flattened to points carrying kind and directionality."""

    points: np.ndarray
    kind: np.ndarray
    directionality: np.ndarray

    @classmethod
    def from_features(cls, features: Sequence[RoadFeature], point_spacing: Optional[float] = None) -> "FeatureCloud":
        points, kinds, dirs = [], [], []
        for feature in features:
            pts = np.asarray(feature.points, dtype=np.float64)
            if point_spacing is not None:
                pts = resample_polyline(pts, point_spacing)
            points.append(pts)
            kinds.append(np.full(len(pts), int(feature.kind)))
            dirs.append(np.full(len(pts), int(feature.directionality)))
        if not points:
            return cls(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return cls(
            np.concatenate(points),
            np.concatenate(kinds).astype(np.int64),
            np.concatenate(dirs).astype(np.int64),
        )


@dataclass(frozen=True, eq=False)
class FrameBatch:
    """RouteFrames padded to common sizes along a leading batch axis."""

    seg_a: np.ndarray
    seg_b: np.ndarray
    seg_lane: np.ndarray
    seg_lane_id: np.ndarray
    seg_s0: np.ndarray
    seg_s1: np.ndarray
    seg_valid: np.ndarray
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_owner: np.ndarray
    lane_ids: np.ndarray
    s_start: np.ndarray
    s_end: np.ndarray
    border_points: np.ndarray
    border_left: np.ndarray
    border_lane: np.ndarray
    border_valid: np.ndarray
    route_length: np.ndarray

    @property
    def max_lanes(self) -> int:
        return self.lane_ids.shape[1]


def _pad(arrays: List[np.ndarray], fill, dtype, min_len: int = 1) -> np.ndarray:
    width = max(min_len, max(len(a) for a in arrays))
    tail = arrays[0].shape[1:]
    out = np.full((len(arrays), width) + tail, fill, dtype=dtype)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
    return out


def stack_frames(frames: Sequence[RouteFrame]) -> FrameBatch:
    """Pad and stack frames; padding segments/edges/points are marked invalid."""
    seg_counts = [len(f.seg_a) for f in frames]
    border_counts = [len(f.border_points) for f in frames]
    return FrameBatch(
        seg_a=_pad([f.seg_a for f in frames], 0.0, np.float64),
        seg_b=_pad([f.seg_b for f in frames], 0.0, np.float64),
        seg_lane=_pad([f.seg_lane for f in frames], -1, np.int64),
        seg_lane_id=_pad([f.lane_ids[f.seg_lane] for f in frames], _NO_LANE, np.int64),
        seg_s0=_pad([f.seg_s0 for f in frames], 0.0, np.float64),
        seg_s1=_pad([f.seg_s1 for f in frames], 0.0, np.float64),
        seg_valid=_pad([np.ones(n, dtype=bool) for n in seg_counts], False, bool),
        edge_a=_pad([f.edge_a for f in frames], 0.0, np.float64),
        edge_b=_pad([f.edge_b for f in frames], 0.0, np.float64),
        edge_owner=_pad([f.edge_owner for f in frames], -1, np.int64),
        lane_ids=_pad([f.lane_ids for f in frames], _NO_LANE, np.int64),
        s_start=_pad([f.s_start for f in frames], np.inf, np.float64),
        s_end=_pad([f.s_end for f in frames], -np.inf, np.float64),
        border_points=_pad([f.border_points for f in frames], 0.0, np.float64),
        border_left=_pad([f.border_left for f in frames], False, bool),
        border_lane=_pad([f.border_lane for f in frames], -1, np.int64),
        border_valid=_pad([np.ones(n, dtype=bool) for n in border_counts], False, bool),
        route_length=np.array([f.route_length for f in frames], dtype=np.float64),
    )


@dataclass(frozen=True)
class ProjectionBatch:
    """Batched RouteProjection fields, each of shape (B, P)."""

    s: np.ndarray
    d: np.ndarray
    lane_index: np.ndarray
    lane_id: np.ndarray
    in_corridor: np.ndarray


_CHUNK_ELEMENTS = 1 << 21


def project_batch(points: np.ndarray, frames: FrameBatch) -> ProjectionBatch:
    """Project (B, P, 2) points onto their row's route frame.

    The closest segment wins by Euclidean point-to-segment distance; ties go
    to the lowest lane_id, then the earliest segment. Large P is processed
    in chunks to bound the (B, P, S) temporaries.
    """
    points = np.asarray(points, dtype=np.float64)
    B, P = points.shape[:2]
    step = max(1, _CHUNK_ELEMENTS // max(1, B * frames.seg_a.shape[1]))
    if P <= step:
        return _project_chunk(points, frames)
    parts = [_project_chunk(points[:, i:i + step], frames) for i in range(0, P, step)]
    return ProjectionBatch(
        **{name: np.concatenate([getattr(p, name) for p in parts], axis=1) for name in ProjectionBatch.__dataclass_fields__}
    )


def _project_chunk(points: np.ndarray, frames: FrameBatch) -> ProjectionBatch:
    a = frames.seg_a[:, None]
    ab = (frames.seg_b - frames.seg_a)[:, None]
    ap = points[:, :, None, :] - a
    len2 = np.sum(ab * ab, axis=-1)
    t = np.sum(ap * ab, axis=-1) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(t, 0.0, 1.0)
    diff = ap - t[..., None] * ab
    dist = np.hypot(diff[..., 0], diff[..., 1])
    dist = np.where(frames.seg_valid[:, None, :], dist, np.inf)

    num_segs = dist.shape[-1]
    tied = dist == dist.min(axis=-1, keepdims=True)
    key = frames.seg_lane_id[:, None, :] * num_segs + np.arange(num_segs)
    best = np.argmin(np.where(tied, key, np.iinfo(np.int64).max), axis=-1)

    def pick(values: np.ndarray) -> np.ndarray:
        return np.take_along_axis(values, best[..., None], axis=-1)[..., 0]

    cross = ab[..., 0] * ap[..., 1] - ab[..., 1] * ap[..., 0]
    best_dist = pick(dist)
    d = np.where(pick(cross) < 0, -best_dist, best_dist)
    seg_s0 = np.broadcast_to(frames.seg_s0[:, None, :], dist.shape)
    seg_s1 = np.broadcast_to(frames.seg_s1[:, None, :], dist.shape)
    t_best = pick(t)
    s = pick(seg_s0) + t_best * (pick(seg_s1) - pick(seg_s0))
    s = np.clip(s, 0.0, frames.route_length[:, None])

    lane_index = np.take_along_axis(frames.seg_lane, best.reshape(len(best), -1), axis=1).reshape(best.shape)
    lane_id = np.take_along_axis(frames.seg_lane_id, best.reshape(len(best), -1), axis=1).reshape(best.shape)
    inside = points_in_polygons(points, frames.edge_a, frames.edge_b, frames.edge_owner, frames.max_lanes)
    return ProjectionBatch(s=s, d=d, lane_index=lane_index, lane_id=lane_id, in_corridor=inside.any(axis=-1))


def footprint_corners(
    x: np.ndarray,
    y: np.ndarray,
    heading: np.ndarray,
    length: float,
    width: float,
    center_offset: float,
    margin: float = 0.0,
) -> np.ndarray:
    """Corners of a box whose center lies center_offset ahead of the pose point."""
    cx = x + center_offset * np.cos(heading)
    cy = y + center_offset * np.sin(heading)
    return box_corners(cx, cy, heading, length + 2.0 * margin, width + 2.0 * margin)


def footprint_on_route_batch(
    x: np.ndarray,
    y: np.ndarray,
    heading: np.ndarray,
    dims: Tuple[float, float, float],
    frames: FrameBatch,
    margin: float,
) -> np.ndarray:
    """(B,) flags: all four inflated-box corners inside the union of lane corridors."""
    length, width, center_offset = dims
    corners = footprint_corners(x, y, heading, length, width, center_offset, margin)
    inside = points_in_polygons(corners, frames.edge_a, frames.edge_b, frames.edge_owner, frames.max_lanes)
    return inside.any(axis=-1).all(axis=-1)


def nearest_points_batch(
    query: np.ndarray,
    points: np.ndarray,
    valid: np.ndarray,
    k: int,
    radius: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The k nearest valid points within radius of each row's query point.

    Args:
        query: (B, 2)
        points: (B, F, 2)
        valid: (B, F)

    Returns:
        (indices, distances, found), each (B, k); unfound slots have index -1
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    diff = points - query[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    dist = np.where(valid & (dist <= radius), dist, np.inf)
    if dist.shape[1] < k:
        dist = np.concatenate([dist, np.full((dist.shape[0], k - dist.shape[1]), np.inf)], axis=1)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    sorted_dist = np.take_along_axis(dist, order, axis=1)
    found = np.isfinite(sorted_dist)
    return np.where(found, order, -1), np.where(found, sorted_dist, 0.0), found


def next_ahead_batch(s: np.ndarray, item_s: np.ndarray, item_valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest item strictly ahead of s along the route.

    Args:
        s: (B,) current route positions
        item_s: (B, N) item positions along s
        item_valid: (B, N)

    Returns:
        (index, distance, found), each (B,)
    """
    gap = np.where(item_valid & (item_s > s[:, None]), item_s - s[:, None], np.inf)
    if gap.shape[1] == 0:
        zeros = np.zeros(len(s))
        return zeros.astype(np.int64), zeros, np.zeros(len(s), dtype=bool)
    index = np.argmin(gap, axis=1)
    distance = np.take_along_axis(gap, index[:, None], axis=1)[:, 0]
    found = np.isfinite(distance)
    return index, np.where(found, distance, 0.0), found


# ---------------------------------------------------------------------------
# Single-scene API
# ---------------------------------------------------------------------------

def project(pos: Sequence[float], frame: RouteFrame) -> RouteProjection:
    """Project a Cartesian point into route coordinates.

    Args:
        pos: (x, y) in meters
        frame: Route frame of the scenario

    Returns:
        RouteProjection with s clamped to [0, route_length]; in_corridor is
        False when the point lies outside every lane corridor
    """
    batch = project_batch(np.asarray(pos, dtype=np.float64).reshape(1, 1, 2), stack_frames([frame]))
    return RouteProjection(
        s=float(batch.s[0, 0]),
        d=float(batch.d[0, 0]),
        lane_id=int(batch.lane_id[0, 0]),
        in_corridor=bool(batch.in_corridor[0, 0]),
    )


def progress_delta(prev: RouteProjection, cur: RouteProjection) -> float:
    """Signed progress between two projections on the same frame."""
    return cur.s - prev.s


def footprint_on_route(
    pose: Sequence[float],
    vehicle_dims: Tuple[float, float, float],
    frame: RouteFrame,
    margin: float = 0.1,
) -> bool:
    """Whether the margin-inflated vehicle box lies inside the lane corridors.

    Args:
        pose: (x, y, heading) of the reference point
        vehicle_dims: (length, width, center_offset ahead of the reference point)
        frame: Route frame
        margin: Inflation per side in meters
    """
    length, width, _ = vehicle_dims
    if length <= 0 or width <= 0:
        raise ValueError(f"vehicle dims must be > 0, got {vehicle_dims}")
    x, y, heading = (np.array([float(v)]) for v in pose[:3])
    return bool(footprint_on_route_batch(x, y, heading, vehicle_dims, stack_frames([frame]), margin)[0])


@dataclass(frozen=True)
class FeaturePoints:
    """k feature-point slots sorted by distance; unfound slots are invalid."""

    points: np.ndarray
    kind: np.ndarray
    directionality: np.ndarray
    distance: np.ndarray
    valid: np.ndarray


def nearest_features(
    pos: Sequence[float],
    features,
    k: int,
    radius: float,
) -> FeaturePoints:
    """The k nearest road-feature polyline points within radius.

    Args:
        pos: (x, y) query point
        features: List of RoadFeature or a prebuilt FeatureCloud
        k: Number of slots to return
        radius: Search radius in meters
    """
    cloud = features if isinstance(features, FeatureCloud) else FeatureCloud.from_features(features)
    index, distance, found = nearest_points_batch(
        np.asarray(pos, dtype=np.float64).reshape(1, 2),
        cloud.points[None],
        np.ones((1, len(cloud.points)), dtype=bool),
        k,
        radius,
    )
    index, distance, found = index[0], distance[0], found[0]
    safe = np.where(found, index, 0)
    if len(cloud.points) == 0:
        return FeaturePoints(np.zeros((k, 2)), np.zeros(k, dtype=np.int64), np.zeros(k, dtype=np.int64), distance, found)
    return FeaturePoints(
        points=np.where(found[:, None], cloud.points[safe], 0.0),
        kind=np.where(found, cloud.kind[safe], 0),
        directionality=np.where(found, cloud.directionality[safe], 0),
        distance=distance,
        valid=found,
    )


@dataclass(frozen=True)
class StopInfo:
    stop_line_distance: Optional[float]
    light_state: LightState
    light_distance: Optional[float]


def positions_along_route(frame: RouteFrame, positions: Sequence[np.ndarray]) -> np.ndarray:
    """Route s of a list of (x, y) positions."""
    if len(positions) == 0:
        return np.zeros(0)
    pts = np.asarray(positions, dtype=np.float64).reshape(1, -1, 2)
    return project_batch(pts, stack_frames([frame])).s[0]


def stop_info(
    projection: RouteProjection,
    frame: RouteFrame,
    stop_lines: Sequence[StopLine],
    traffic_lights: Sequence[TrafficLight],
    t: int,
) -> StopInfo:
    """Nearest stop line and signal stop point strictly ahead of projection.s.

    Args:
        projection: Current route projection
        frame: Frame used to place stop lines and signals along s
        stop_lines: Stop lines of the scenario
        traffic_lights: Signals with per-step states
        t: Step at which the light state is read
    """
    s = np.array([projection.s])
    line_s = positions_along_route(frame, [line.position for line in stop_lines])
    _, line_dist, line_found = next_ahead_batch(s, line_s[None], np.ones((1, len(line_s)), dtype=bool))

    light_s = positions_along_route(frame, [light.stop_point for light in traffic_lights])
    light_idx, light_dist, light_found = next_ahead_batch(s, light_s[None], np.ones((1, len(light_s)), dtype=bool))

    state = LightState.UNKNOWN
    if light_found[0]:
        state = LightState(int(traffic_lights[int(light_idx[0])].states[t]))
    return StopInfo(
        stop_line_distance=float(line_dist[0]) if line_found[0] else None,
        light_state=state,
        light_distance=float(light_dist[0]) if light_found[0] else None,
    )
