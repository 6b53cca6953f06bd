"""
Rescaled flow about a singular point and sphere/cylinder tangent-flow classification
"""

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np

from ..core.exceptions import NoData, PreconditionViolation
from ..models.surfaces import AXIS, AxiProfile, Surface
from ..utils.numerics import tangent_frame
from .flow import TRUST_MARGIN, FlowHistory

logger = logging.getLogger(__name__)

SPHERE_RADIUS = np.sqrt(2.0)
CYLINDER_RADIUS = 1.0
LATE_SNAPSHOTS = 3
MIN_WINDOW_POINTS = 12
SAMPLES_PER_WINDOW = 40


def scale_factor(T: float, t):
    """lambda(t) = (2 (T - t))^-1/2."""
    return (2.0 * (T - np.asarray(t, dtype=float))) ** -0.5


def rescaled_time(T: float, t):
    """s = -1/2 log(T - t)."""
    return -0.5 * np.log(T - np.asarray(t, dtype=float))


@dataclass
class Window:
    """Solid truncated cylinder {|xi . axis| <= half_length, distance to the axis line <= radius}."""
    half_length: float = 4.0
    radius: float = 4.0
    axis: np.ndarray = field(default_factory=lambda: AXIS.copy())
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def contains(self, points: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(points) - self.center
        along = rel @ self.axis
        across = np.linalg.norm(rel - along[:, None] * self.axis, axis=1)
        return (np.abs(along) <= self.half_length) & (across <= self.radius)

    def scaled(self, factor: float, center: np.ndarray) -> "Window":
        return Window(factor * self.half_length, factor * self.radius, self.axis, np.asarray(center, dtype=float))


@dataclass
class RescaledFlow:
    center: np.ndarray
    T: float
    times: np.ndarray
    s: np.ndarray
    snapshots: List[Surface]
    T_ci: float = 0.0

    def __len__(self) -> int:
        return len(self.s)

    def trusted(self, margin: float = TRUST_MARGIN) -> np.ndarray:
        """Indices of the snapshots at least ``margin`` x T_ci before T."""
        return np.nonzero(self.T - self.times >= margin * self.T_ci)[0]

    def unrescale(self, index: int) -> Surface:
        """Physical snapshot recovered from the rescaled one at ``index``."""
        lam = float(scale_factor(self.T, self.times[index]))
        return self.snapshots[index].transformed(1.0 / lam, -lam * self.center)


@dataclass
class BlowupClass:
    kind: Literal["Sphere", "Cylinder", "Unknown"]
    radius: float
    axis: Optional[np.ndarray]
    fit_residual: float
    center: Optional[np.ndarray] = None
    per_snapshot: List[Tuple[str, float, float]] = field(default_factory=list)


def rescale(history: FlowHistory, center: np.ndarray, T: float, T_ci: float = 0.0) -> RescaledFlow:
    """Map each snapshot by xi = lambda(t) (x - center) and relabel by s = -1/2 log(T - t)."""
    center = np.asarray(center, dtype=float)
    if not np.all(np.isfinite(center)):
        raise PreconditionViolation("rescaling center must be finite")
    if T <= history.times[-1]:
        raise PreconditionViolation(f"T={T:.6g} does not exceed the last snapshot time {history.times[-1]:.6g}")
    lam = scale_factor(T, history.times)
    snapshots = [snap.transformed(float(l), center) for snap, l in zip(history.snapshots, lam)]
    logger.debug(f"Rescaled {len(snapshots)} snapshots about {center} with T={T:.6g}")
    return RescaledFlow(center, float(T), history.times.copy(), rescaled_time(T, history.times), snapshots,
                        float(T_ci))


def _refined_cloud(profile: AxiProfile, window: Window, n_theta: int) -> np.ndarray:
    """Revolved generating polyline, segments near the window split to SAMPLES_PER_WINDOW pieces per reach."""
    reach = float(np.hypot(window.half_length, window.radius))
    images = int(np.ceil(reach / profile.period)) + 1 if profile.periodic else 0
    curve = profile.polyline(images)
    a, b = curve[:-1], curve[1:]
    level = window.center[1]
    near = (np.minimum(a[:, 0], b[:, 0]) <= level + reach) & (np.maximum(a[:, 0], b[:, 0]) >= level - reach)
    if not near.any():
        return np.empty((0, 3))
    h = reach / SAMPLES_PER_WINDOW
    pieces = []
    for p, q in zip(a[near], b[near]):
        k = max(1, int(np.ceil(np.linalg.norm(q - p) / h)))
        pieces.append(p + (np.arange(k) / k)[:, None] * (q - p))
    mer = np.vstack(pieces + [b[near][-1:]])
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    return np.stack([
        np.outer(mer[:, 1], np.cos(theta)),
        np.repeat(mer[:, :1], n_theta, axis=1),
        np.outer(mer[:, 1], np.sin(theta)),
    ], axis=-1).reshape(-1, 3)


def _window_points(surface: Surface, window: Window, n_theta: int) -> np.ndarray:
    if isinstance(surface, AxiProfile):
        cloud = _refined_cloud(surface, window, n_theta)
    else:
        cloud = surface.cloud(n_theta)
    return cloud[window.contains(cloud)]


def fit_sphere(points: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Algebraic sphere fit |p|^2 = 2 c.p + k; returns (center, radius, max radial deviation)."""
    design = np.column_stack([2.0 * points, np.ones(len(points))])
    sol, *_ = np.linalg.lstsq(design, np.einsum("ij,ij->i", points, points), rcond=None)
    center = sol[:3]
    radius = float(np.sqrt(max(sol[3] + center @ center, 0.0)))
    deviation = float(np.abs(np.linalg.norm(points - center, axis=1) - radius).max())
    return center, radius, deviation


def _axis_distance(points: np.ndarray, center: np.ndarray, axis: np.ndarray) -> np.ndarray:
    rel = points - center
    return np.linalg.norm(rel - (rel @ axis)[:, None] * axis, axis=1)


def fit_cylinder(points: np.ndarray, rounds: int = 5) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """
    Alternating cylinder fit: axis from the principal second moment about the
    current axis point, then a circle refit of the axis point in the normal plane.

    Returns (axis point, axis, radius, max radial deviation).
    """
    center = points.mean(axis=0)
    axis = AXIS.copy()
    for _ in range(rounds):
        rel = points - center
        _, vecs = np.linalg.eigh(rel.T @ rel)
        axis = vecs[:, -1]
        e1, e2 = tangent_frame(axis)
        x, y = rel @ e1, rel @ e2
        design = np.column_stack([2.0 * x, 2.0 * y, np.ones(len(x))])
        (a, b, _), *_ = np.linalg.lstsq(design, x * x + y * y, rcond=None)
        center = center + a * e1 + b * e2
    dist = _axis_distance(points, center, axis)
    radius = float(dist.mean())
    return center, axis, radius, float(np.abs(dist - radius).max())


def _classify_points(points: np.ndarray, radius_tol: float, residual_tol: float):
    s_center, s_radius, s_res = fit_sphere(points)
    c_center, c_axis, c_radius, c_res = fit_cylinder(points)
    candidates = sorted([
        (s_res, "Sphere", s_radius, None, s_center, SPHERE_RADIUS),
        (c_res, "Cylinder", c_radius, c_axis, c_center, CYLINDER_RADIUS),
    ], key=lambda item: item[0])
    residual, kind, radius, axis, center, expected = candidates[0]
    if abs(radius - expected) > radius_tol * expected or residual > residual_tol:
        return BlowupClass("Unknown", radius, axis, residual, center)
    return BlowupClass(kind, radius, axis, residual, center)


def classify(
    rescaled: RescaledFlow,
    window: Optional[Window] = None,
    radius_tol: float = 0.1,
    residual_tol: float = 0.2,
    n_theta: int = 32,
) -> BlowupClass:
    """
    Fit a sphere and a cylinder to the last rescaled snapshots inside the window.

    The better model wins if its radius is within ``radius_tol`` of sqrt(2) or 1
    and its residual is below ``residual_tol``; the three late snapshots must agree.
    Late means the last snapshots lying TRUST_MARGIN x T_ci or more before T.
    """
    window = window or Window()
    late = [rescaled.snapshots[i] for i in rescaled.trusted()[-LATE_SNAPSHOTS:]]
    if len(late) < LATE_SNAPSHOTS:
        raise PreconditionViolation(f"only {len(late)} snapshots lie {TRUST_MARGIN:g} x T_ci before T")
    clouds = [_window_points(snap, window, n_theta) for snap in late]
    if all(len(c) == 0 for c in clouds):
        raise NoData("no rescaled samples inside the window")
    if any(len(c) < MIN_WINDOW_POINTS for c in clouds):
        raise PreconditionViolation(f"classification needs {LATE_SNAPSHOTS} late snapshots meeting the window")

    results = [_classify_points(c, radius_tol, residual_tol) for c in clouds]
    final = results[-1]
    kinds = {r.kind for r in results}
    spread = max(r.radius for r in results) - min(r.radius for r in results)
    allowed = 2.0 * max(r.fit_residual for r in results) + 0.01 * final.radius
    if len(kinds) != 1 or spread > allowed:
        logger.info(f"Tangent flow not stabilised: kinds {sorted(kinds)}, radius spread {spread:.3g}")
        final = BlowupClass("Unknown", final.radius, final.axis, final.fit_residual, final.center)
    if final.axis is not None and final.axis @ AXIS < 0:
        final.axis = -final.axis
    final.per_snapshot = [(r.kind, r.radius, r.fit_residual) for r in results]
    logger.info(f"Blow-up classified as {final.kind}: radius {final.radius:.4f}, residual {final.fit_residual:.3g}")
    return final


def typeI_check(history: FlowHistory, T: float, stability: float = 0.1) -> Tuple[bool, float]:
    """sup of max|A| (2(T - t))^1/2 and whether it settles within ``stability`` over the last decade."""
    if len(history) == 0:
        raise PreconditionViolation("empty history")
    before = history.times < T
    t, a = history.times[before], history.amax[before]
    values = a * np.sqrt(2.0 * (T - t))
    constant = float(values.max())
    decade = a >= a.max() / 10.0
    tail = values[decade]
    stable = bool(len(tail) >= 2 and (tail.max() - tail.min()) < stability * tail.max())
    return stable, constant

