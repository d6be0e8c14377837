"""Planar helpers: rigid transforms, polyline resampling, segment intersection."""

from __future__ import annotations

import numpy as np


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_frame(points, origin, heading: float) -> np.ndarray:
    """Express world ``points [..., 2]`` in the frame at ``origin`` rotated by ``heading``."""
    pts = np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([c * x + s * y, -s * x + c * y], axis=-1)


def from_frame(points, origin, heading: float) -> np.ndarray:
    """Inverse of :func:`to_frame`."""
    pts = np.asarray(points, dtype=float)
    c, s = np.cos(heading), np.sin(heading)
    x, y = pts[..., 0], pts[..., 1]
    out = np.stack([c * x - s * y, s * x + c * y], axis=-1)
    return out + np.asarray(origin, dtype=float)


def rotate_vectors(vectors, heading: float) -> np.ndarray:
    """Rotate free vectors (velocities, directions) by ``-heading``."""
    return to_frame(vectors, (0.0, 0.0), heading)


def arc_lengths(points: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(points, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample(points: np.ndarray, n: int) -> np.ndarray:
    """``n`` points spaced uniformly in arc length; endpoints are kept."""
    cum = arc_lengths(points)
    targets = np.linspace(0.0, cum[-1], n)
    out = np.stack([np.interp(targets, cum, points[:, 0]), np.interp(targets, cum, points[:, 1])], -1)
    out[0], out[-1] = points[0], points[-1]
    return out


def point_at_arclength(points: np.ndarray, s: float) -> tuple[np.ndarray, float]:
    """Position and tangent heading at arc length ``s`` along the polyline."""
    cum = arc_lengths(points)
    s = float(np.clip(s, 0.0, cum[-1]))
    i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(points) - 2))
    seg = points[i + 1] - points[i]
    frac = (s - cum[i]) / max(cum[i + 1] - cum[i], 1e-12)
    return points[i] + frac * seg, float(np.arctan2(seg[1], seg[0]))


def point_segment_distance(p, a, b) -> np.ndarray:
    """Distance from ``p [..., 2]`` to each segment ``a -> b`` (broadcasting)."""
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=-1), 1e-300)
    t = np.clip(np.sum((p - a) * ab, axis=-1) / denom, 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.hypot(*np.moveaxis(p - proj, -1, 0))


def nearest_on_polyline(p, points: np.ndarray) -> tuple[float, int]:
    """Perpendicular distance from ``p`` to the polyline and the nearest segment index."""
    d = point_segment_distance(np.asarray(p, dtype=float), points[:-1], points[1:])
    i = int(np.argmin(d))
    return float(d[i]), i


def _orient(p, q, r):
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (
        r[..., 0] - p[..., 0]
    )


def _within_box(p, q, r):
    return (
        (np.minimum(p[..., 0], q[..., 0]) <= r[..., 0])
        & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
        & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1])
        & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1]))
    )


def segments_intersect(a0, a1, b0, b1) -> np.ndarray:
    """Elementwise (broadcasting) segment intersection by orientation signs.

    Touching and collinear overlap count as intersecting.
    """
    d1 = _orient(b0, b1, a0)
    d2 = _orient(b0, b1, a1)
    d3 = _orient(a0, a1, b0)
    d4 = _orient(a0, a1, b1)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    touch = (
        ((d1 == 0) & _within_box(b0, b1, a0))
        | ((d2 == 0) & _within_box(b0, b1, a1))
        | ((d3 == 0) & _within_box(a0, a1, b0))
        | ((d4 == 0) & _within_box(a0, a1, b1))
    )
    return proper | touch


def polylines_cross(paths: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """For each path ``[K, T, 2]``, whether any of its steps crosses any segment ``[S, 2, 2]``."""
    paths = np.asarray(paths, dtype=float)
    k = paths.shape[0]
    if len(segments) == 0 or paths.shape[1] < 2:
        return np.zeros(k, dtype=bool)
    a0 = paths[:, :-1, None, :]
    a1 = paths[:, 1:, None, :]
    b0 = segments[None, None, :, 0, :]
    b1 = segments[None, None, :, 1, :]
    hits = segments_intersect(a0, a1, b0, b1)
    return hits.reshape(k, -1).any(axis=1)


def polyline_segments(polylines) -> np.ndarray:
    """Stack consecutive point pairs of every polyline into ``[S, 2, 2]``."""
    chunks = [np.stack([p[:-1], p[1:]], axis=1) for p in polylines if len(p) >= 2]
    if not chunks:
        return np.zeros((0, 2, 2))
    return np.concatenate(chunks, axis=0)
