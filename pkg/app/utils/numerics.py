"""
Small vectorised geometry kernels shared by the services
"""

from typing import Tuple

import numpy as np

_CHUNK = 4096


def unit(vectors: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalise vectors along ``axis``; zero vectors stay zero."""
    norms = np.linalg.norm(vectors, axis=axis, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors, dtype=float), where=norms > 0)


def tangent_frame(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``normal`` to a right-handed frame."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def quadratic_fit(uv: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares fit of w ~ g.(u, v) + 1/2 (a u^2 + 2 b uv + c v^2).

    Returns the gradient g and the symmetric Hessian [[a, b], [b, c]].
    """
    u, v = uv[:, 0], uv[:, 1]
    design = np.column_stack([u, v, 0.5 * u * u, u * v, 0.5 * v * v])
    coef, *_ = np.linalg.lstsq(design, w, rcond=None)
    grad = coef[:2]
    hess = np.array([[coef[2], coef[3]], [coef[3], coef[4]]])
    return grad, hess


def point_segment_distance_2d(points: np.ndarray, start: np.ndarray, end: np.ndarray) -> np.ndarray:
    """Distance from every point (k, 2) to every segment (m, 2) -> (k, m)."""
    seg = end - start
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    seg_len2 = np.where(seg_len2 > 0, seg_len2, 1.0)
    rel = points[:, None, :] - start[None, :, :]
    t = np.clip(np.einsum("kmj,mj->km", rel, seg) / seg_len2, 0.0, 1.0)
    closest = start[None, :, :] + t[..., None] * seg[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def polyline_distance_2d(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from points (k, 2) to an open polyline (m, 2)."""
    start, end = polyline[:-1], polyline[1:]
    out = np.empty(len(points))
    for lo in range(0, len(points), _CHUNK // 8):
        block = points[lo:lo + _CHUNK // 8]
        out[lo:lo + len(block)] = point_segment_distance_2d(block, start, end).min(axis=1)
    return out


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd ray casting for points (k, 2) against a closed polygon (m, 2)."""
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    inside = np.zeros(len(points), dtype=bool)
    for lo in range(0, len(points), _CHUNK // 8):
        px = points[lo:lo + _CHUNK // 8, 0][:, None]
        py = points[lo:lo + _CHUNK // 8, 1][:, None]
        straddle = (a[None, :, 1] > py) != (b[None, :, 1] > py)
        dy = np.where(b[:, 1] - a[:, 1] == 0, 1.0, b[:, 1] - a[:, 1])
        x_cross = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / dy[None, :]
        hits = straddle & (px < x_cross)
        inside[lo:lo + len(px)] = (hits.sum(axis=1) % 2) == 1
    return inside


def polyline_self_intersects(polyline: np.ndarray, closed: bool = False) -> bool:
    """True when two non-adjacent segments of a 2-D polyline cross."""
    p = polyline if not closed else np.vstack([polyline, polyline[:1]])
    a, b = p[:-1], p[1:]
    m = len(a)
    if m < 3:
        return False
    i, j = np.triu_indices(m, k=2)
    if closed:
        keep = ~((i == 0) & (j == m - 1))
        i, j = i[keep], j[keep]
    r = b[i] - a[i]
    s = b[j] - a[j]
    qp = a[j] - a[i]
    denom = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    ok = np.abs(denom) > 1e-300
    denom = np.where(ok, denom, 1.0)
    t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / denom
    u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / denom
    return bool(np.any(ok & (t > 0) & (t < 1) & (u > 0) & (u < 1)))


def solid_angle_winding(points: np.ndarray, vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Generalised winding number of a closed oriented triangle mesh at each point."""
    tri = vertices[faces]
    out = np.empty(len(points))
    for lo in range(0, len(points), 64):
        block = points[lo:lo + 64]
        a = tri[None, :, 0, :] - block[:, None, :]
        b = tri[None, :, 1, :] - block[:, None, :]
        c = tri[None, :, 2, :] - block[:, None, :]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("kfi,kfi->kf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("kfi,kfi->kf", a, b) * lc
               + np.einsum("kfi,kfi->kf", b, c) * la + np.einsum("kfi,kfi->kf", c, a) * lb)
        out[lo:lo + len(block)] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4.0 * np.pi)
    return out


def segments_hit_triangles(p0: np.ndarray, p1: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Pairwise test: does segment k (p0[k] -> p1[k]) pierce triangle k (tri[k])."""
    eps = 1e-12
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    d = p1 - p0
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps
    det = np.where(ok, det, 1.0)
    s = p0 - tri[:, 0]
    u = np.einsum("ij,ij->i", s, h) / det
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) / det
    t = np.einsum("ij,ij->i", e2, q) / det
    return ok & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps) & (t < 1 - eps)


def segment_distances(a0: np.ndarray, a1: np.ndarray, b0: np.ndarray, b1: np.ndarray) -> np.ndarray:
    """Closest distance between every segment of one set (k) and every segment of another (m) -> (k, m)."""
    d1, d2 = a1 - a0, b1 - b0
    r = a0[:, None, :] - b0[None, :, :]
    a = np.einsum("ij,ij->i", d1, d1)[:, None]
    e = np.einsum("ij,ij->i", d2, d2)[None, :]
    b = d1 @ d2.T
    c = np.einsum("il,ijl->ij", d1, r)
    f = np.einsum("jl,ijl->ij", d2, r)
    denom = a * e - b * b
    safe = np.where(denom > 1e-300, denom, 1.0)
    s = np.where(denom > 1e-300, np.clip((b * f - c * e) / safe, 0.0, 1.0), 0.0)
    t = (b * s + f) / e
    t_clamped = np.clip(t, 0.0, 1.0)
    s = np.where((t < 0) | (t > 1), np.clip((b * t_clamped - c) / a, 0.0, 1.0), s)
    gap = r + s[..., None] * d1[:, None, :] - t_clamped[..., None] * d2[None, :, :]
    return np.linalg.norm(gap, axis=-1)
