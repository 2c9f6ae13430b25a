"""
Planar geometry on corridor polylines and disks.

The corridor is the union of capsules (segment swept by a disk of radius
half_width) along the centerline, so point-in-corridor is "distance to the
polyline <= half_width" and a ray leaves the corridor at the end of the
connected capsule interval that contains its origin.
"""

from typing import Tuple

import numpy as np

_EPS = 1e-12


def segment_projection(points: np.ndarray, polyline: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Nearest point on a polyline for each query point.

    Returns:
        (distance (N,), segment index (N,), fraction along that segment (N,))
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = polyline[:-1]
    ab = polyline[1:] - a
    len2 = np.maximum(np.einsum("ij,ij->i", ab, ab), _EPS)

    ap = points[:, None, :] - a[None, :, :]
    frac = np.clip(np.einsum("nmj,mj->nm", ap, ab) / len2, 0.0, 1.0)
    closest = a[None] + frac[..., None] * ab[None]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=-1)

    idx = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    return dist[rows, idx], idx, frac[rows, idx]


def cumulative_length(polyline: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def arc_length_of(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Arc-length coordinate of each point's projection onto the polyline."""
    _, idx, frac = segment_projection(points, polyline)
    cum = cumulative_length(polyline)
    seg = np.diff(cum)
    return cum[idx] + frac * seg[idx]


def signed_lateral(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance to the polyline, positive to the left of travel direction."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist, idx, frac = segment_projection(points, polyline)
    a = polyline[idx]
    ab = polyline[idx + 1] - a
    foot = a + frac[:, None] * ab
    rel = points - foot
    cross = ab[:, 0] * rel[:, 1] - ab[:, 1] * rel[:, 0]
    return np.where(cross >= 0.0, dist, -dist)


def point_at_arc_length(polyline: np.ndarray, s) -> np.ndarray:
    """Linear interpolation along the polyline (clamped to its ends)."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    cum = cumulative_length(polyline)
    x = np.interp(s, cum, polyline[:, 0])
    y = np.interp(s, cum, polyline[:, 1])
    return np.stack([x, y], axis=-1)


def tangent_at_arc_length(polyline: np.ndarray, s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    cum = cumulative_length(polyline)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(polyline) - 2)
    d = polyline[idx + 1] - polyline[idx]
    return d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), _EPS)


def _disk_interval(origin, direction, center, radius):
    """[lo, hi] ray parameters inside a disk; NaN when missed."""
    q = origin - center
    b = q @ direction
    c = q @ q - radius * radius
    disc = b * b - c
    if disc < 0.0:
        return np.nan, np.nan
    root = np.sqrt(disc)
    return -b - root, -b + root


def _disks_intervals(origin, directions, centers, radius):
    q = origin[None, :] - centers
    b = directions @ q.T
    c = np.einsum("ij,ij->i", q, q) - radius * radius
    disc = b * b - c[None, :]
    root = np.sqrt(np.maximum(disc, 0.0))
    hit = disc >= 0.0
    return np.where(hit, -b - root, np.inf), np.where(hit, -b + root, -np.inf)


def _slab_interval(c0, c1, low, high):
    """Ray parameters where low <= c0 + c1 r <= high (c0 (M,), c1 (R, M))."""
    inside = (c0 >= low) & (c0 <= high)
    flat = np.abs(c1) < _EPS
    safe = np.where(flat, 1.0, c1)
    r1, r2 = (low - c0) / safe, (high - c0) / safe
    lo = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(r1, r2))
    hi = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(r1, r2))
    return lo, hi


def capsule_intervals(origin: np.ndarray, directions: np.ndarray, polyline: np.ndarray, radius: float):
    """
    Ray parameter interval covered by each capsule of the corridor.

    Args:
        origin: (2,) ray origin
        directions: (R, 2) unit directions

    Returns:
        (lo, hi), each (R, M-1); lo > hi where the ray misses a capsule.
    """
    origin = np.asarray(origin, dtype=np.float64)
    directions = np.atleast_2d(directions)
    a, b = polyline[:-1], polyline[1:]

    lo_a, hi_a = _disks_intervals(origin, directions, a, radius)
    lo_b, hi_b = _disks_intervals(origin, directions, b, radius)

    seg = b - a
    length = np.linalg.norm(seg, axis=1)
    e = seg / np.maximum(length, _EPS)[:, None]
    n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    q = origin[None, :] - a
    lo_e, hi_e = _slab_interval(np.einsum("ij,ij->i", q, e), directions @ e.T, 0.0, length)
    lo_n, hi_n = _slab_interval(np.einsum("ij,ij->i", q, n), directions @ n.T, -radius, radius)
    lo_s, hi_s = np.maximum(lo_e, lo_n), np.minimum(hi_e, hi_n)
    empty_slab = (lo_s > hi_s) | (length < _EPS)[None, :]
    lo_s = np.where(empty_slab, np.inf, lo_s)
    hi_s = np.where(empty_slab, -np.inf, hi_s)

    lo = np.minimum(np.minimum(lo_a, lo_b), lo_s)
    hi = np.maximum(np.maximum(hi_a, hi_b), hi_s)
    return lo, hi


def corridor_exit_distances(origin: np.ndarray, directions: np.ndarray, polyline: np.ndarray, radius: float) -> np.ndarray:
    """Distance along each ray until it first leaves the corridor (0 if outside)."""
    lo, hi = capsule_intervals(origin, directions, polyline, radius)
    reach = np.zeros(lo.shape[0])
    while True:
        extend = np.where(lo <= reach[:, None], hi, -np.inf).max(axis=1)
        updated = np.maximum(reach, extend)
        if np.array_equal(updated, reach):
            return reach
        reach = updated


def point_in_corridor(points: np.ndarray, polyline: np.ndarray, half_width: float) -> np.ndarray:
    dist, _, _ = segment_projection(points, polyline)
    return dist <= half_width


def ray_disk_hit(origin: np.ndarray, direction: np.ndarray, center: np.ndarray, radius: float) -> float:
    """Distance to the first hit with a disk (0 if the origin is inside, inf if missed)."""
    lo, hi = _disk_interval(origin, direction, center, radius)
    if np.isnan(lo) or hi < 0.0:
        return np.inf
    return float(max(lo, 0.0))


def closest_approach(d0: np.ndarray, w: np.ndarray, duration: float) -> float:
    """Minimum of |d0 + w t| for t in [0, duration]."""
    ww = float(w @ w)
    if ww < _EPS:
        return float(np.linalg.norm(d0))
    t = np.clip(-(d0 @ w) / ww, 0.0, duration)
    return float(np.linalg.norm(d0 + w * t))


def rotation(heading: float) -> np.ndarray:
    """World -> local rotation for a frame whose forward axis is `heading`.

    Local axes: x to the right, y forward.
    """
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[s, -c], [c, s]])
