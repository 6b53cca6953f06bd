"""
Linking numbers of closed polylines and the loop-around-the-neck audit
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from ..core.config import settings
from ..core.exceptions import DegenerateGeometry, Indeterminate, NotLinked, PreconditionViolation
from ..models.surfaces import TriMesh
from ..utils.numerics import segment_distances, tangent_frame, unit
from .flow import FlowHistory
from .neck import NeckCertificate, NeckWindow

logger = logging.getLogger(__name__)

MAX_PROJECTIONS = 32
MIN_CROSSING_ANGLE = np.deg2rad(1.0)


@dataclass(frozen=True, eq=False)
class Loop:
    """Closed polyline; the closing segment from the last point back to the first is implicit."""
    points: np.ndarray
    orientation: int = 1
    vertices: Optional[np.ndarray] = None

    @property
    def polyline(self) -> np.ndarray:
        return self.points if self.orientation > 0 else self.points[::-1]

    def segments(self):
        p = self.polyline
        return p, np.roll(p, -1, axis=0)

    def reversed(self) -> "Loop":
        return Loop(self.points, -self.orientation, self.vertices)

    def validate(self, tol: float = 1e-9) -> "Loop":
        p0, p1 = self.segments()
        n = len(p0)
        if n < 3:
            raise DegenerateGeometry("a loop needs at least three points")
        dist = segment_distances(p0, p1, p0, p1)
        i, j = np.triu_indices(n, k=2)
        keep = ~((i == 0) & (j == n - 1))
        if np.any(dist[i[keep], j[keep]] <= tol):
            raise DegenerateGeometry("loop self-intersects")
        return self


def gauss_linking(a: Loop, b: Loop) -> float:
    """Discrete Gauss integral: quadrilateral solid angles of the segment-pair Gauss map."""
    k0, k1 = a.segments()
    l0, l1 = b.segments()
    pa = l0[None, :, :] - k0[:, None, :]
    pb = l0[None, :, :] - k1[:, None, :]
    pc = l1[None, :, :] - k1[:, None, :]
    pd = l1[None, :, :] - k0[:, None, :]

    def dot(x, y):
        return np.einsum("ijk,ijk->ij", x, y)

    triple = dot(pa, np.cross(pb, pc))
    na, nb, nc, nd = (np.linalg.norm(x, axis=-1) for x in (pa, pb, pc, pd))
    d1 = na * nb * nc + dot(pa, pb) * nc + dot(pb, pc) * na + dot(pc, pa) * nb
    d2 = na * nd * nc + dot(pa, pd) * nc + dot(pd, pc) * na + dot(pc, pa) * nd
    return float((np.arctan2(triple, d1) + np.arctan2(triple, d2)).sum() / (2.0 * np.pi))


def _cross2(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def crossing_count(a: Loop, b: Loop, direction: np.ndarray) -> Optional[int]:
    """
    Half the signed crossings of the projection along ``direction``; None when the
    projection is not generic (shallow crossings or crossings at segment ends).
    """
    e1, e2 = tangent_frame(direction)
    a0, a1 = a.segments()
    b0, b1 = b.segments()
    da, db = a1 - a0, b1 - b0
    pa0 = np.column_stack([a0 @ e1, a0 @ e2])
    pb0 = np.column_stack([b0 @ e1, b0 @ e2])
    ra = np.column_stack([da @ e1, da @ e2])
    rb = np.column_stack([db @ e1, db @ e2])

    qp = pb0[None, :, :] - pa0[:, None, :]
    denom = _cross2(ra[:, None, :], rb[None, :, :])
    ok = np.abs(denom) > 1e-300
    safe = np.where(ok, denom, 1.0)
    s = _cross2(qp, rb[None, :, :]) / safe
    u = _cross2(qp, ra[:, None, :]) / safe
    near = ok & (s > -1e-9) & (s < 1 + 1e-9) & (u > -1e-9) & (u < 1 + 1e-9)
    hits = ok & (s >= 0) & (s < 1) & (u >= 0) & (u < 1)
    edge = 1e-6
    if np.any(near & ~((s > edge) & (s < 1 - edge) & (u > edge) & (u < 1 - edge))):
        return None
    i, j = np.nonzero(hits)
    if len(i) == 0:
        return 0
    norms = np.linalg.norm(ra[i], axis=1) * np.linalg.norm(rb[j], axis=1)
    if np.any(np.abs(denom[i, j]) < np.sin(MIN_CROSSING_ANGLE) * norms):
        return None
    height_a = (a0[i] + s[i, j][:, None] * da[i]) @ direction
    height_b = (b0[j] + u[i, j][:, None] * db[j]) @ direction
    a_over = height_a > height_b
    over = np.where(a_over[:, None], da[i], db[j])
    under = np.where(a_over[:, None], db[j], da[i])
    signs = np.sign(np.einsum("ij,j->i", np.cross(over, under), direction))
    total = int(signs.sum())
    if total % 2:
        return None
    return total // 2


def linking_number(a: Loop, b: Loop, tol: Optional[float] = None, seed: Optional[int] = None) -> int:
    """Linking number by the Gauss integral and by a crossing count; the two must agree."""
    a0, a1 = a.segments()
    b0, b1 = b.segments()
    scale = max(np.abs(a.points).max(), np.abs(b.points).max(), 1.0)
    tol = 1e-9 * scale if tol is None else tol
    gap = float(segment_distances(a0, a1, b0, b1).min())
    if gap <= tol:
        raise Indeterminate(f"loops touch (distance {gap:.3g})")

    integral = gauss_linking(a, b)
    rounded = int(np.rint(integral))
    if abs(integral - rounded) > 0.1:
        raise Indeterminate(f"Gauss integral {integral:.4f} is not near an integer")

    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    for _ in range(MAX_PROJECTIONS):
        count = crossing_count(a, b, unit(rng.normal(size=3)))
        if count is not None:
            break
    else:
        raise Indeterminate("no generic projection found")
    if count != rounded:
        raise Indeterminate(f"Gauss integral gives {rounded}, crossing count gives {count}")
    return rounded


def neck_loop(window: NeckWindow, t: float, certificate: Optional[NeckCertificate], n: int = 64) -> Loop:
    """Boundary circle of the disk D(t), counterclockwise about the neck axis."""
    if certificate is None or not certificate.valid:
        raise PreconditionViolation("the neck loop needs a valid certificate")
    radius = window.disk_radius(t)
    e1, e2 = tangent_frame(window.axis)
    phi = 2.0 * np.pi * np.arange(n) / n
    points = window.center + radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return Loop(points)


def _segment_crossings(p0: np.ndarray, p1: np.ndarray, window: NeckWindow, t: float) -> np.ndarray:
    """Signed crossing (+1, -1 or 0) of every directed segment p0 -> p1 with the disk D(t)."""
    hi = (p0 - window.center) @ window.axis
    hj = (p1 - window.center) @ window.axis
    # endpoints on the plane count as above it
    crosses = (hi >= 0) != (hj >= 0)
    tau = np.where(crosses, hi / np.where(crosses, hi - hj, 1.0), 0.0)
    rel = p0 + tau[:, None] * (p1 - p0) - window.center
    radial = np.linalg.norm(rel - (rel @ window.axis)[:, None] * window.axis, axis=1)
    inside = crosses & (radial < window.disk_radius(t))
    return np.where(inside, np.sign(hj - hi), 0.0).astype(int)


def _disk_crossings(mesh: TriMesh, window: NeckWindow, t: float):
    e = mesh.edges
    return e, _segment_crossings(mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]], window, t)


def disk_crossings(loop: Loop, window: NeckWindow, t: float) -> int:
    """Signed number of times the loop passes through D(t)."""
    p0, p1 = loop.segments()
    return int(_segment_crossings(p0, p1, window, t).sum())


def transversal_loop(surface: TriMesh, window: NeckWindow, t: float, max_starts: int = 24) -> Loop:
    """
    A mesh edge loop crossing D(t) exactly once, found as a shortest path
    between the two sheets of the crossing-parity double cover.
    """
    edges, sign = _disk_crossings(surface, window, t)
    if not np.any(sign):
        raise NotLinked("no mesh edge crosses the disk")
    n = surface.size
    flip = sign != 0
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, i + n, j, j + n])
    cols = np.concatenate([np.where(flip, j + n, j), np.where(flip, j, j + n),
                           np.where(flip, i + n, i), np.where(flip, i, i + n)])
    cover = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * n, 2 * n)).tocsr()

    lookup = {}
    for (a, b), s in zip(edges, sign):
        lookup[(int(a), int(b))] = int(s)
        lookup[(int(b), int(a))] = -int(s)

    crossing_edges = edges[flip]
    starts = np.unique(crossing_edges.ravel())
    centre_dist = np.linalg.norm(surface.vertices[starts] - window.center, axis=1)
    for start in starts[np.argsort(centre_dist)][:max_starts]:
        _, pred = breadth_first_order(cover, int(start), directed=False, return_predecessors=True)
        if pred[start + n] < 0:
            continue
        path = [int(start + n)]
        while path[-1] != start:
            path.append(int(pred[path[-1]]))
        cycle = [p % n for p in reversed(path)][:-1]
        if len(set(cycle)) != len(cycle) or len(cycle) < 3:
            continue
        steps = [lookup[(cycle[k], cycle[(k + 1) % len(cycle)])] for k in range(len(cycle))]
        if sum(abs(s) for s in steps) != 1:
            continue
        loop = Loop(surface.vertices[cycle], 1, np.array(cycle)).validate()
        logger.debug(f"Transversal loop of {len(cycle)} edges from vertex {start}")
        return loop if sum(steps) > 0 else loop.reversed()
    raise NotLinked("no edge loop crosses the disk exactly once")


@dataclass
class LinkAudit:
    times: np.ndarray
    linking: np.ndarray
    min_distance: np.ndarray
    crossings: np.ndarray
    preserved: bool
    rows: List[dict] = field(default_factory=list)


def link_audit(
    torus_history: FlowHistory,
    loop: Loop,
    window: NeckWindow,
    certificate: NeckCertificate,
    t_offset: float = 0.0,
    seed: Optional[int] = None,
) -> LinkAudit:
    """
    Transport the loop with the mesh vertices and compute its linking number
    with the neck circle at every snapshot before the neck pinches. The signed
    count of passes through D(t) must keep odd parity across the re-snapped loops.
    """
    if loop.vertices is None:
        raise PreconditionViolation("the transported loop must be a mesh edge loop")
    times, links, gaps, passes = [], [], [], []
    for t_local, snap in zip(torus_history.times, torus_history.snapshots):
        t = t_offset + t_local
        if t >= window.T:
            break
        moved = Loop(snap.vertices[loop.vertices], loop.orientation, loop.vertices)
        circle = neck_loop(window, t, certificate)
        c0, c1 = circle.segments()
        m0, m1 = moved.segments()
        gap = float(segment_distances(m0, m1, c0, c1).min())
        value = linking_number(moved, circle, seed=seed)
        times.append(t)
        links.append(value)
        gaps.append(gap)
        passes.append(disk_crossings(moved, window, t))
    if not links:
        raise PreconditionViolation("no torus snapshot before the singular time")
    links, passes = np.array(links), np.array(passes)
    parity = np.abs(passes) % 2
    if np.any(parity != 1):
        logger.error(f"crossing parity with D(t) changes at t={times[int(np.argmin(parity))]:.6g}")
    preserved = bool(np.all(np.abs(links) == 1) and np.all(links == links[0]) and np.all(parity == 1))
    rows = [{"t": float(t), "linking_number": int(k), "min_distance": float(g), "crossings": int(c),
             "parity": int(c) % 2} for t, k, g, c in zip(times, links, gaps, passes)]
    logger.info(f"Link audit over {len(links)} snapshots: linking numbers {sorted(set(links.tolist()))}")
    return LinkAudit(np.array(times), links, np.array(gaps), passes, preserved, rows)
