"""
Interior non-collapsing audits and sphere placement beside a neck
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from ..core.exceptions import (
    NotMeanConvex,
    PerturbationTooCoarse,
    PlacementFailed,
    PreconditionViolation,
)
from ..models.surfaces import AxiProfile, Surface
from .flow import FlowHistory
from .geometry import curvature
from .neck import DIMENSION, NeckWindow

logger = logging.getLogger(__name__)

_CHUNK = 32


@dataclass
class AlphaAudit:
    points: np.ndarray
    r_in: np.ndarray
    alpha: np.ndarray
    alpha_min: float


@dataclass
class SpherePlacement:
    r: float
    t0: float
    side: str = ""
    y: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    gap: float = float("nan")
    delta: float = float("nan")
    C: float = float("nan")
    alpha: float = float("nan")
    x: Optional[np.ndarray] = None
    trajectory: int = -1

    @property
    def lifespan(self) -> float:
        """Extinction time r^2 / 2N of the shrinking sphere."""
        return self.r ** 2 / (2.0 * DIMENSION)


def _targets(surface: Surface, n_theta: int) -> np.ndarray:
    if isinstance(surface, AxiProfile) and surface.periodic:
        cloud = surface.cloud(n_theta)
        shift = np.array([0.0, surface.period, 0.0])
        return np.vstack([cloud - shift, cloud, cloud + shift])
    return surface.cloud(n_theta)


def alpha_audit(surface: Surface, n_theta: int = 32) -> AlphaAudit:
    """
    Largest interior ball touching at each sample:
    r_in(x) = min over y with (x - y).nu > 0 of |y - x|^2 / (2 (x - y).nu).
    """
    curv = curvature(surface)
    if curv.H.min() <= 0:
        raise NotMeanConvex(f"min H = {curv.H.min():.4g}")
    x = surface.points
    nu = curv.normals
    y = _targets(surface, n_theta)
    scale = 1e-12 * max(1.0, float(np.abs(y).max()))
    r_in = np.empty(len(x))
    for lo in range(0, len(x), _CHUNK):
        diff = x[lo:lo + _CHUNK, None, :] - y[None, :, :]
        depth = np.einsum("kmi,ki->km", diff, nu[lo:lo + _CHUNK])
        dist2 = np.einsum("kmi,kmi->km", diff, diff)
        ratio = np.where(depth > scale, dist2 / (2.0 * np.where(depth > scale, depth, 1.0)), np.inf)
        r_in[lo:lo + _CHUNK] = ratio.min(axis=1)
    alpha = curv.H * r_in
    return AlphaAudit(x, r_in, alpha, float(alpha.min()))


def alpha_trace(history: FlowHistory, stride: int = 1, n_theta: int = 32) -> np.ndarray:
    """Rows (t, alpha_min) over every ``stride``-th snapshot."""
    rows = [(t, alpha_audit(snap, n_theta).alpha_min)
            for t, snap in zip(history.times[::stride], history.snapshots[::stride])]
    return np.array(rows)


def sphere_survival(placement: SpherePlacement, T_est: float) -> bool:
    """Does the ball, shrinking as an exact sphere from t0, outlive T_est."""
    return placement.t0 + placement.lifespan > T_est


def ball_clearance(placement: SpherePlacement, history: FlowHistory, T_est: float) -> np.ndarray:
    """
    Rows (t, distance from the shrinking ball to M(t), centre inside flag) for
    the recorded t in [t0, T_est) while the ball is alive, its radius
    (r^2 - 2N (t - t0))^1/2.
    """
    rows = []
    for t, snap in zip(history.times, history.snapshots):
        if t < placement.t0 - 1e-15:
            continue
        if t >= T_est or t >= placement.t0 + placement.lifespan:
            break
        radius = np.sqrt(placement.r ** 2 - 2.0 * DIMENSION * (t - placement.t0))
        center = placement.center[None]
        gap = float(snap.distance_to(center)[0]) - radius
        rows.append((t, gap, float(snap.contains(center)[0])))
    return np.array(rows).reshape(-1, 3)


def _distance_to_window(point: np.ndarray, neck: NeckWindow, t: float) -> float:
    """Euclidean distance from a point to the solid cylinder K(t); negative inside."""
    window = neck.physical(t)
    rel = point - window.center
    along = abs(rel @ window.axis) - window.half_length
    across = np.linalg.norm(rel - (rel @ window.axis) * window.axis) - window.radius
    if along <= 0 and across <= 0:
        return max(along, across)
    return float(np.hypot(max(along, 0.0), max(across, 0.0)))


def _regular_points(history: FlowHistory, neck: NeckWindow, regular_fraction: float):
    """Per side, the tracked trajectory with bounded curvature whose limit lies farthest from the neck."""
    finals = history.trajectories.final
    bounded = history.trajectories.A.max(axis=0) < regular_fraction * history.threshold
    axial = neck.axial(finals)
    distance = np.linalg.norm(finals - neck.center, axis=1)
    chosen = {}
    for side, mask in (("left", axial < 0), ("right", axial > 0)):
        candidates = np.nonzero(bounded & mask)[0]
        if len(candidates) == 0:
            raise PreconditionViolation(f"no regular limit point in the {side} bulb")
        chosen[side] = int(candidates[np.argmax(distance[candidates])])
    return chosen


@dataclass
class _Schedule:
    x: np.ndarray
    size: float
    delta: float
    t1: float
    t2: float


def _schedule(history: FlowHistory, neck: NeckWindow, trajectory: int) -> _Schedule:
    """delta = |x|/8, t1 (|F(p,t)| >= |x|/2 onward) and t2 (4 lambda^-1(t) <= |x|/16 onward)."""
    traj = history.trajectories
    x = traj.final[trajectory] - neck.center
    size = float(np.linalg.norm(x))
    path = np.linalg.norm(traj.positions[:, trajectory] - neck.center, axis=1)
    close = np.nonzero(path < size / 2.0)[0]
    if len(close) and close[-1] + 1 >= len(history.times):
        raise PlacementFailed("trajectory never stays outside |x|/2")
    t1 = float(history.times[close[-1] + 1]) if len(close) else float(history.times[0])
    t2 = neck.T - (size / 64.0) ** 2 / 2.0
    return _Schedule(x, size, size / 8.0, t1, t2)


def _tangency(surface: Surface, anchor: np.ndarray, delta: float, C: float) -> int:
    """Sample nearest to ``anchor`` with H <= 2C, within delta."""
    curv = curvature(surface)
    dist = np.linalg.norm(surface.points - anchor, axis=1)
    usable = (curv.H <= 2.0 * C) & (dist <= delta)
    if not usable.any():
        raise PerturbationTooCoarse(
            f"no sample with H <= 2C within delta={delta:.3g} of F(p, t0); nearest at {dist.min():.3g}")
    return int(np.nonzero(usable)[0][np.argmin(dist[usable])])


def _surface_at(perturbed: Union[FlowHistory, Surface], t: float) -> Surface:
    return perturbed.snapshot_at(t) if isinstance(perturbed, FlowHistory) else perturbed


def place_sphere(
    base_history: FlowHistory,
    perturbed: Union[FlowHistory, Surface],
    neck: NeckWindow,
    trajectory: int,
    side: str,
    C: Optional[float] = None,
    alpha_ratio: float = 0.5,
) -> SpherePlacement:
    """Place one ball beside the neck following a regular trajectory."""
    T = neck.T
    traj = base_history.trajectories
    plan = _schedule(base_history, neck, trajectory)
    if C is None:
        C = 2.0 * float(traj.H[:, trajectory].max())

    early = max(plan.t1, plan.t2)
    alpha = alpha_audit(_surface_at(perturbed, early)).alpha_min
    base_alpha = alpha_audit(base_history.snapshot_at(early)).alpha_min
    if alpha < alpha_ratio * base_alpha:
        raise PreconditionViolation(f"perturbed surface is {alpha:.3g}-non-collapsed, base {base_alpha:.3g}")

    r = min(alpha / (2.0 * C), plan.delta)
    t3 = T - r ** 2 / 8.0
    target = max(plan.t1, plan.t2, t3)
    index = base_history.index_at_or_after(target)
    t0 = float(base_history.times[index])
    if t0 < target - 1e-15:
        raise PlacementFailed(f"no recorded time at or after t0={target:.6g}")

    surface = _surface_at(perturbed, t0)
    k = _tangency(surface, traj.positions[index, trajectory], plan.delta, C)
    y = surface.points[k]
    center = y - r * curvature(surface).normals[k]

    if not bool(surface.contains(center[None])[0]) or surface.distance_to(center[None])[0] < r * (1.0 - 1e-2):
        raise PlacementFailed(f"ball of radius {r:.3g} does not fit inside the perturbed region")
    gap = _distance_to_window(center, neck, t0) - r
    if gap < plan.delta / 2.0:
        raise PlacementFailed(f"ball comes within {gap:.3g} of K(t0), need {plan.delta / 2:.3g}")
    placement = SpherePlacement(r, t0, side, y, center, gap, plan.delta, C, alpha, plan.x + neck.center, trajectory)
    if not sphere_survival(placement, T):
        raise PlacementFailed(f"ball dies at {t0 + placement.lifespan:.6g} before T={T:.6g}")
    logger.info(f"Placed {side} ball r={r:.4g} at t0={t0:.6g}, gap {gap:.3g}, lifespan {placement.lifespan:.3g}")
    return placement


def place_spheres(
    base_history: FlowHistory,
    perturbed: Union[FlowHistory, Surface],
    neck: Optional[NeckWindow],
    C: Optional[float] = None,
    alpha_ratio: float = 0.5,
    regular_fraction: float = 0.1,
) -> Tuple[SpherePlacement, SpherePlacement]:
    """One ball in each bulb, each sized by the non-collapsing constant and its regular point."""
    if neck is None:
        raise PreconditionViolation("sphere placement needs a certified neck")
    if not base_history.mean_convex:
        raise PreconditionViolation("sphere placement needs a mean-convex base flow")
    chosen = _regular_points(base_history, neck, regular_fraction)

    # both tangency points must exist before any audit runs
    for index in chosen.values():
        plan = _schedule(base_history, neck, index)
        early = base_history.index_at_or_after(max(plan.t1, plan.t2))
        bound = C if C is not None else 2.0 * float(base_history.trajectories.H[:, index].max())
        _tangency(_surface_at(perturbed, base_history.times[early]),
                  base_history.trajectories.positions[early, index], plan.delta, bound)

    left = place_sphere(base_history, perturbed, neck, chosen["left"], "left", C, alpha_ratio)
    right = place_sphere(base_history, perturbed, neck, chosen["right"], "right", C, alpha_ratio)
    return left, right
