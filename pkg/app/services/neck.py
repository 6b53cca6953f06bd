"""
Neck certificates, bulb decomposition and limit sets of a neckpinch
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.interpolate import griddata
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from ..core.config import settings
from ..core.exceptions import NeckNotFound, PreconditionViolation, TopologyViolation
from ..models.surfaces import AXIS, AxiProfile, Surface, TriMesh
from ..utils.numerics import tangent_frame
from .blowup import RescaledFlow, Window
from .flow import FlowHistory, SingularReport

logger = logging.getLogger(__name__)

DIMENSION = 2


@dataclass
class NeckWindow:
    """
    K(t) = lambda^-1(t) K~ about ``center``, oriented by ``axis``; the disk D(t)
    is its slice at axis coordinate 0.
    """
    center: np.ndarray
    axis: np.ndarray
    T: float
    half_length: float = field(default_factory=lambda: settings.WINDOW_HALF_LENGTH)
    radius: float = field(default_factory=lambda: settings.WINDOW_RADIUS)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.axis = np.asarray(self.axis, dtype=float) / np.linalg.norm(self.axis)

    @property
    def rescaled(self) -> Window:
        return Window(self.half_length, self.radius, AXIS.copy())

    def inverse_scale(self, t: float) -> float:
        """lambda^-1(t) = (2 (T - t))^1/2."""
        if t >= self.T:
            raise PreconditionViolation(f"t={t:.6g} is not before T={self.T:.6g}")
        return float(np.sqrt(2.0 * (self.T - t)))

    def physical(self, t: float) -> Window:
        scale = self.inverse_scale(t)
        return Window(scale * self.half_length, scale * self.radius, self.axis, self.center)

    def disk_radius(self, t: float) -> float:
        return self.inverse_scale(t) * self.radius

    def axial(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.center) @ self.axis

    def _ring(self, radius: float, offset: float, n: int) -> np.ndarray:
        e1, e2 = tangent_frame(self.axis)
        phi = 2.0 * np.pi * np.arange(n) / n
        return (self.center + offset * self.axis
                + radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))

    def disk_mesh(self, t: float, n: int = 64) -> TriMesh:
        """Triangle fan of D(t)."""
        ring = self._ring(self.disk_radius(t), 0.0, n)
        k = np.arange(n)
        faces = np.column_stack([np.full(n, n), k, (k + 1) % n])
        return TriMesh(np.vstack([ring, self.center]), faces)

    def window_mesh(self, t: float, n: int = 64) -> TriMesh:
        """Closed boundary of K(t): the lateral side and both lids."""
        box = self.physical(t)
        lower = self._ring(box.radius, -box.half_length, n)
        upper = self._ring(box.radius, box.half_length, n)
        lids = self.center + np.outer([-box.half_length, box.half_length], self.axis)
        k = np.arange(n)
        k1 = (k + 1) % n
        faces = np.vstack([
            np.column_stack([k, k1, n + k1]),
            np.column_stack([k, n + k1, n + k]),
            np.column_stack([np.full(n, 2 * n), k1, k]),
            np.column_stack([np.full(n, 2 * n + 1), n + k, n + k1]),
        ])
        return TriMesh(np.vstack([lower, upper, lids]), faces)


@dataclass
class NeckCertificate:
    s: float
    t: float
    u: np.ndarray
    u_c2: float
    valid: bool
    reason: str = ""


@dataclass
class BulbDecomposition:
    t: float
    window: Window
    mesh: TriMesh
    neck_part: np.ndarray
    left: np.ndarray
    right: np.ndarray
    surface: Surface

    def axial(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.window.center) @ self.window.axis

    def in_region(self, points: np.ndarray, side: str) -> np.ndarray:
        """Membership in the left or right component of the region minus the closed neck part."""
        points = np.atleast_2d(points)
        sign = -1.0 if side == "left" else 1.0
        outside_k = ~self.window.contains(points)
        return self.surface.contains(points) & outside_k & (sign * self.axial(points) > 0)

    def tag(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        tags = np.where(self.axial(points) < 0, "left", "right").astype(object)
        tags[self.window.contains(points)] = "neck"
        return tags


@dataclass
class LimitSet:
    points: np.ndarray
    regular_mask: np.ndarray
    bulb_tag: np.ndarray
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# certificates


def _alignment(axis: Optional[np.ndarray]) -> Optional[Rotation]:
    if axis is None:
        return None
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    if np.allclose(axis, AXIS, atol=1e-12):
        return None
    rotation, _ = Rotation.align_vectors([AXIS], [axis])
    return rotation


def _profile_graph(profile: AxiProfile, window: Window) -> Tuple[np.ndarray, np.ndarray, str]:
    """Axial graph u(xi_2) = r - 1 of a profile about the window axis."""
    if profile.periodic:
        images = int(np.ceil(window.half_length / profile.period)) + 1
        curve = profile.polyline(images=images)
    else:
        curve = profile.polyline()
    xi2, rho = curve[:, 0], curve[:, 1]
    band = np.abs(xi2) <= window.half_length
    if band.sum() < 5:
        return xi2[band], rho[band] - 1.0, "too few samples in the window"
    if np.any(rho[band] >= window.radius):
        return xi2[band], rho[band] - 1.0, "surface meets the side of the window"
    if xi2.min() > -window.half_length or xi2.max() < window.half_length:
        return xi2[band], rho[band] - 1.0, "surface does not cross both lids"
    return xi2[band], rho[band] - 1.0, ""


def _profile_c2(xi2: np.ndarray, u: np.ndarray) -> float:
    du = np.gradient(u, xi2)
    d2u = np.gradient(du, xi2)
    return float(max(np.abs(u).max(), np.abs(du).max(), np.abs(d2u).max()))


def _grid_graph(points: np.ndarray, window: Window, n_theta: int, n_axial: int):
    """Cylindrical graph of a cloud already aligned with the window axis."""
    xi2 = points[:, 1]
    rho = np.hypot(points[:, 0], points[:, 2])
    band = np.abs(xi2) <= window.half_length
    if np.any(rho[band] >= window.radius):
        return None, "surface meets the side of the window"
    if xi2.min() > -window.half_length or xi2.max() < window.half_length:
        return None, "surface does not cross both lids"
    theta = np.arctan2(points[:, 2], points[:, 0])
    near = np.abs(xi2) <= window.half_length * 1.1
    theta, xi2, u = theta[near], xi2[near], rho[near] - 1.0
    # periodic padding in theta
    theta = np.concatenate([theta - 2 * np.pi, theta, theta + 2 * np.pi])
    xi2 = np.tile(xi2, 3)
    u = np.tile(u, 3)
    g_theta = 2 * np.pi * np.arange(n_theta) / n_theta - np.pi
    g_axial = np.linspace(-window.half_length, window.half_length, n_axial)
    tt, zz = np.meshgrid(g_theta, g_axial, indexing="ij")
    grid = griddata(np.column_stack([theta, xi2]), u, (tt, zz), method="linear")
    if np.any(np.isnan(grid)):
        return None, "graph does not cover the window"
    return (grid, g_theta[1] - g_theta[0], g_axial[1] - g_axial[0]), ""


def _grid_c2(grid: np.ndarray, d_theta: float, d_axial: float) -> float:
    u_t, u_z = np.gradient(grid, d_theta, d_axial)
    u_tt, u_tz = np.gradient(u_t, d_theta, d_axial)
    _, u_zz = np.gradient(u_z, d_theta, d_axial)
    grad = np.hypot(u_t, u_z)
    hess = np.sqrt(u_tt ** 2 + 2 * u_tz ** 2 + u_zz ** 2)
    return float(max(np.abs(grid).max(), grad.max(), hess.max()))


def certify(surface: Surface, window: Window, eps: float, s: float = 0.0, t: float = 0.0,
            axis: Optional[np.ndarray] = None, n_theta: int = 32, n_axial: int = 65) -> NeckCertificate:
    """C^2 graph certificate of one rescaled snapshot over the unit cylinder in the window."""
    rotation = _alignment(axis)
    if isinstance(surface, AxiProfile) and rotation is None:
        xi2, u, reason = _profile_graph(surface, window)
        if reason:
            return NeckCertificate(s, t, u, float("inf"), False, reason)
        norm = _profile_c2(xi2, u)
        return NeckCertificate(s, t, u, norm, norm < eps)
    cloud = surface.cloud(n_theta)
    if rotation is not None:
        cloud = rotation.apply(cloud)
    graph, reason = _grid_graph(cloud, window, n_theta, n_axial)
    if graph is None:
        return NeckCertificate(s, t, np.empty(0), float("inf"), False, reason)
    norm = _grid_c2(*graph)
    return NeckCertificate(s, t, graph[0], norm, norm < eps)


def detect_neck(
    rescaled: RescaledFlow,
    eps: float = settings.NECK_EPS,
    window: Optional[Window] = None,
    axis: Optional[np.ndarray] = None,
) -> Tuple[float, List[NeckCertificate]]:
    """
    Certify every trusted rescaled snapshot; s_neck is the first s after which
    every certificate holds.
    """
    window = window or Window(settings.WINDOW_HALF_LENGTH, settings.WINDOW_RADIUS)
    trusted = rescaled.trusted()
    if len(trusted) == 0:
        raise NeckNotFound("no rescaled snapshot lies clear of the T_est uncertainty")
    certificates = [
        certify(rescaled.snapshots[i], window, eps, float(rescaled.s[i]), float(rescaled.times[i]), axis)
        for i in trusted
    ]
    valid = np.array([c.valid for c in certificates])
    if not valid[-1]:
        last = certificates[-1]
        raise NeckNotFound(f"final snapshot not certified (u_c2={last.u_c2:.3g}, {last.reason or 'norm too large'})")
    failing = np.nonzero(~valid)[0]
    first = int(failing[-1] + 1) if len(failing) else 0
    logger.info(f"Neck certified from s={certificates[first].s:.4f} (t={certificates[first].t:.6g}); "
                f"final u_c2={certificates[-1].u_c2:.3g}")
    return certificates[first].s, certificates[first:]


# ---------------------------------------------------------------------------
# bulbs


def bulb_decompose(surface: Surface, window: NeckWindow, t: float, n_theta: int = 32) -> BulbDecomposition:
    """Remove M(t) inside K(t) and label the remaining components by their side of the neck."""
    mesh = surface.to_trimesh(n_theta) if isinstance(surface, AxiProfile) else surface
    physical = window.physical(t)
    inside = physical.contains(mesh.vertices)
    keep = np.nonzero(~inside)[0]
    if len(keep) == 0:
        raise TopologyViolation("the whole surface lies inside K(t)")

    adj = mesh.adjacency
    count, labels = connected_components(adj[keep][:, keep], directed=False)
    if count != 2:
        raise TopologyViolation(f"{count} component(s) off the neck, expected 2")

    touches = np.asarray(adj[keep][:, np.nonzero(inside)[0]].sum(axis=1)).ravel() > 0
    axial = window.axial(mesh.vertices[keep])
    sides = {}
    for c in range(count):
        boundary = touches & (labels == c)
        if not boundary.any():
            raise TopologyViolation("a component does not meet K(t)")
        sides[c] = "left" if axial[boundary].mean() < 0 else "right"
    if set(sides.values()) != {"left", "right"}:
        raise TopologyViolation("both components lie on the same side of the neck")
    left_label = next(c for c, side in sides.items() if side == "left")
    return BulbDecomposition(
        t=t,
        window=physical,
        mesh=mesh,
        neck_part=np.nonzero(inside)[0],
        left=keep[labels == left_label],
        right=keep[labels != left_label],
        surface=surface,
    )


# ---------------------------------------------------------------------------
# limit sets


def ball_radius(T: float, t, dimension: int = DIMENSION):
    """(2N (T - t))^1/2, the radius of the shrinking sphere that dies at T."""
    return np.sqrt(2.0 * dimension * np.maximum(T - np.asarray(t, dtype=float), 0.0))


def _merge(points: np.ndarray, radius: float) -> Tuple[np.ndarray, List[List[int]]]:
    tree = cKDTree(points)
    assigned = np.zeros(len(points), dtype=bool)
    centres, members = [], []
    for i in range(len(points)):
        if assigned[i]:
            continue
        group = [j for j in tree.query_ball_point(points[i], radius) if not assigned[j]]
        assigned[group] = True
        centres.append(points[group].mean(axis=0))
        members.append(group)
    return np.array(centres), members


def limit_set(
    history: FlowHistory,
    report: SingularReport,
    window: Optional[NeckWindow] = None,
    t_neck: Optional[float] = None,
    regular_fraction: float = 0.1,
) -> LimitSet:
    """
    Sample M* by the final positions of the tracked trajectories and keep the
    points whose shrinking balls meet every recorded M(t).
    """
    T = report.T_est
    merge_radius = 2.0 * float(ball_radius(T, history.times[-1]))
    candidates = np.vstack([history.trajectories.final, report.singular_points])
    track_A = history.trajectories.A.max(axis=0)
    peak = np.concatenate([track_A, np.full(len(report.singular_points), np.inf)])
    points, groups = _merge(candidates, merge_radius)
    regular = np.array([bool(np.all(peak[g] < regular_fraction * history.threshold)) for g in groups])

    keep = np.ones(len(points), dtype=bool)
    radii = ball_radius(T, history.times)
    for snap, r in zip(history.snapshots, radii):
        slack = snap.max_edge()
        dist = snap.distance_to(points)
        failed = keep & (dist > r + slack)
        if failed.any():
            for p in points[failed]:
                logger.warning(f"limit point {np.round(p, 6)} fails the ball criterion")
            keep &= ~failed
    excluded = int((~keep).sum())

    if window is not None and t_neck is not None:
        snap = history.snapshots[history.index_at_or_after(t_neck)]
        decomposition = bulb_decompose(snap, window, t_neck)
        tags = decomposition.tag(points[keep])
    else:
        tags = np.full(int(keep.sum()), "neck", dtype=object)
    logger.info(f"Limit set: {int(keep.sum())} points, {int(regular[keep].sum())} regular, {excluded} excluded")
    return LimitSet(points[keep], regular[keep], np.asarray(tags, dtype=object), excluded)


def coverage_gaps(limit: LimitSet, history: FlowHistory, T: float, n_theta: int = 16) -> np.ndarray:
    """Rows (t, max distance from M(t) to the limit set, ball radius) over the recorded times."""
    tree = cKDTree(limit.points)
    rows = []
    for t, snap in zip(history.times, history.snapshots):
        gap = float(tree.query(snap.cloud(n_theta))[0].max())
        rows.append((t, gap, float(ball_radius(T, t))))
    return np.array(rows)
