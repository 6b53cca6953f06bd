"""
Mean curvature flow of profiles and meshes up to the first singular time
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.sparse import bmat, diags, identity, lil_matrix
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from ..core.exceptions import (
    DegenerateGeometry,
    EmbeddingViolation,
    NoBlowup,
    PreconditionViolation,
    SolverFailure,
    StepRejected,
)
from ..models.schemas import FlowParams
from ..models.surfaces import AxiProfile, Surface, TriMesh
from ..utils.numerics import point_segment_distance_2d
from .geometry import Curvature, cotan_laplacian, curvature, profile_geometry

logger = logging.getLogger(__name__)

MAX_HALVINGS = 8
MIN_FIT_POINTS = 10
# snapshots closer to T_est than this many T_ci are not rescaled reliably
TRUST_MARGIN = 10.0


@dataclass
class Trajectories:
    """Tracked material points; arrays are indexed (snapshot, point)."""
    positions: np.ndarray  # (k, n, 3)
    H: np.ndarray          # (k, n)
    A: np.ndarray          # (k, n)

    @property
    def initial(self) -> np.ndarray:
        return self.positions[0]

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def __len__(self) -> int:
        return self.positions.shape[1]


@dataclass
class FlowHistory:
    times: np.ndarray
    snapshots: List[Surface]
    amax: np.ndarray
    hmin: np.ndarray
    trajectories: Trajectories
    threshold: float
    mean_convex: bool
    reached_threshold: bool

    def __len__(self) -> int:
        return len(self.times)

    @property
    def amax_trace(self) -> np.ndarray:
        return np.column_stack([self.times, self.amax])

    @property
    def hmin_trace(self) -> np.ndarray:
        return np.column_stack([self.times, self.hmin])

    @property
    def final(self) -> Surface:
        return self.snapshots[-1]

    def index_at(self, t: float) -> int:
        """Index of the snapshot closest to time t."""
        return int(np.argmin(np.abs(self.times - t)))

    def index_at_or_after(self, t: float) -> int:
        later = np.nonzero(self.times >= t - 1e-15)[0]
        return int(later[0]) if len(later) else len(self.times) - 1

    def snapshot_at(self, t: float) -> Surface:
        return self.snapshots[self.index_at(t)]


@dataclass
class SingularReport:
    T_est: float
    T_ci: float
    singular_points: np.ndarray
    typeI_constant: float
    mean_convex: bool
    steps: int


# ---------------------------------------------------------------------------
# profile integrators


class _ProfileSystem:
    """Method-of-lines form of the normal flow of a generating curve."""

    def __init__(self, profile: AxiProfile):
        self.m = profile.size
        self.periodic = profile.periodic
        self.period = profile.period
        self.r_slice = slice(None) if self.periodic else slice(1, -1)

    def pack(self, z: np.ndarray, r: np.ndarray) -> np.ndarray:
        return np.concatenate([z, r[self.r_slice]])

    def unpack(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r = np.zeros(self.m)
        r[self.r_slice] = y[self.m:]
        return y[:self.m], r

    def rhs(self, _t: float, y: np.ndarray) -> np.ndarray:
        z, r = self.unpack(y)
        geom = profile_geometry(z, r, self.periodic, self.period)
        velocity = -(geom.k1 + geom.k2)[:, None] * geom.normal
        return self.pack(velocity[:, 0], velocity[:, 1])


@lru_cache(maxsize=16)
def _sparsity(m: int, periodic: bool):
    """Jacobian pattern: each sample couples to its two neighbours."""
    r_index = np.full(m, -1)
    if periodic:
        r_index[:] = m + np.arange(m)
    else:
        r_index[1:-1] = m + np.arange(m - 2)
    n = m + int((r_index >= 0).sum())
    pattern = lil_matrix((n, n), dtype=np.int8)
    for i in range(m):
        rows = [i] + ([r_index[i]] if r_index[i] >= 0 else [])
        for d in (-1, 0, 1):
            j = i + d
            if periodic:
                j %= m
            elif j < 0 or j >= m:
                continue
            cols = [j] + ([r_index[j]] if r_index[j] >= 0 else [])
            for a in rows:
                for b in cols:
                    pattern[a, b] = 1
    return pattern.tocsr()


def _step_profile_bdf(profile: AxiProfile, dt: float, params: FlowParams, amax: float) -> AxiProfile:
    system = _ProfileSystem(profile)
    y0 = system.pack(profile.axis_samples, profile.radius)
    try:
        sol = solve_ivp(
            system.rhs,
            (0.0, dt),
            y0,
            method="BDF",
            jac_sparsity=_sparsity(profile.size, profile.periodic),
            rtol=params.rtol,
            atol=0.1 * params.rtol / max(amax, 1e-300),
        )
    except DegenerateGeometry as exc:
        raise StepRejected(f"profile degenerated inside the step: {exc}") from exc
    if not sol.success:
        raise StepRejected(f"BDF integrator failed: {sol.message}")
    z, r = system.unpack(sol.y[:, -1])
    return AxiProfile(z, r, profile.boundary, profile.period)


@lru_cache(maxsize=16)
def _second_differences(m: int, periodic: bool):
    off = np.ones(m - 1)
    base = diags([off, -2.0 * np.ones(m), off], [-1, 0, 1], format="lil")
    if periodic:
        base[0, m - 1] = 1.0
        base[m - 1, 0] = 1.0
        return base.tocsr(), base.tocsr()
    dz, dr = base.copy(), base.copy()
    # reflected ghosts at the poles
    dz[0, 1] = 2.0
    dz[m - 1, m - 2] = 2.0
    dr[0, 1] = 0.0
    dr[m - 1, m - 2] = 0.0
    return dz.tocsr(), dr.tocsr()


def _step_profile_semi_implicit(profile: AxiProfile, dt: float) -> AxiProfile:
    """
    Linearly implicit Euler step: implicit in X_uu, coefficients and the
    rotational term frozen at the old time level. Only the normal part of
    the curvature vector moves the samples.
    """
    z, r, m = profile.axis_samples, profile.radius, profile.size
    geom = profile_geometry(z, r, profile.periodic, profile.period)
    nz, nr = geom.normal[:, 0], geom.normal[:, 1]

    weight = np.ones(m)
    explicit = -geom.k2
    if not profile.periodic:
        weight[[0, -1]] = 2.0
        explicit = explicit.copy()
        explicit[[0, -1]] = 0.0
    c = weight / geom.speed2

    dz, dr = _second_differences(m, profile.periodic)
    block = bmat([
        [diags(c * nz * nz) @ dz, diags(c * nz * nr) @ dr],
        [diags(c * nr * nz) @ dz, diags(c * nr * nr) @ dr],
    ])
    system = (identity(2 * m) - dt * block).tolil()
    rhs = np.concatenate([z + dt * explicit * nz, r + dt * explicit * nr])

    if profile.periodic:
        # the ghost neighbours of the first and last samples sit one period away
        offset = np.zeros(m)
        offset[0], offset[-1] = -profile.period, profile.period
        rhs += dt * np.concatenate([c * nz * nz * offset, c * nr * nz * offset])
    else:
        # pole radii stay on the axis
        for row in (m, 2 * m - 1):
            system[row, :] = 0.0
            system[row, row] = 1.0
            rhs[row] = 0.0

    solution = spsolve(system.tocsc(), rhs)
    if not np.all(np.isfinite(solution)):
        raise StepRejected("linear solve produced non-finite samples")
    return AxiProfile(solution[:m], solution[m:], profile.boundary, profile.period)


def _step_mesh(mesh: TriMesh, dt: float) -> TriMesh:
    delta, _ = cotan_laplacian(mesh)
    return mesh.with_vertices(mesh.vertices + dt * delta)


def _stable_limit(amax: float, cfl: float) -> float:
    return np.inf if amax <= 0 else cfl / amax ** 2


def step(surface: Surface, dt: float, params: Optional[FlowParams] = None) -> Surface:
    """Advance one time step of dt; StepRejected when the result is not embedded."""
    params = params or FlowParams()
    amax = float(curvature(surface).A.max())
    if dt <= 0 or dt > _stable_limit(amax, params.cfl) * (1.0 + 1e-9):
        raise PreconditionViolation(f"dt={dt:.3g} exceeds cfl/max|A|^2 for max|A|={amax:.3g}")
    try:
        if isinstance(surface, AxiProfile):
            if params.scheme == "semi-implicit":
                moved = _step_profile_semi_implicit(surface, dt)
            else:
                moved = _step_profile_bdf(surface, dt, params, amax)
        else:
            moved = _step_mesh(surface, dt)
        return moved.validate()
    except (EmbeddingViolation, DegenerateGeometry) as exc:
        raise StepRejected(str(exc)) from exc


# ---------------------------------------------------------------------------
# redistribution


def redistribute(profile: AxiProfile, adapt_weight: float) -> AxiProfile:
    """
    Resample the generating curve with density proportional to
    (1 - w) / L + w |A| / int |A| ds. Poles stay fixed.
    """
    curv = curvature(profile)
    s = profile.arclength()
    total = s[-1]
    A = np.append(curv.A, curv.A[0]) if profile.periodic else curv.A
    seg = np.diff(s)
    seg_A = 0.5 * (A[1:] + A[:-1])
    mass = float((seg_A * seg).sum())
    density = (1.0 - adapt_weight) / total + adapt_weight * seg_A / mass
    monitor = np.concatenate([[0.0], np.cumsum(density * seg)])
    monitor /= monitor[-1]

    m = profile.size
    if profile.periodic:
        targets = np.arange(m) / m
    else:
        targets = np.arange(m) / (m - 1)
    s_new = np.interp(targets, monitor, s)

    curve = profile.polyline()
    if profile.periodic:
        drift = profile.period * s / total
        z_spline = CubicSpline(s, curve[:, 0] - drift, bc_type="periodic")
        r_spline = CubicSpline(s, curve[:, 1], bc_type="periodic")
        z_new = z_spline(s_new) + profile.period * s_new / total
        r_new = r_spline(s_new)
    else:
        z_new = CubicSpline(s, curve[:, 0])(s_new)
        r_new = CubicSpline(s, curve[:, 1])(s_new)
        z_new[0], z_new[-1] = curve[0, 0], curve[-1, 0]
        r_new[0] = r_new[-1] = 0.0
    return AxiProfile(z_new, r_new, profile.boundary, profile.period).validate()


def smooth_tangential(mesh: TriMesh, strength: float = 0.5) -> TriMesh:
    """Umbrella smoothing restricted to the tangent planes."""
    adj = mesh.adjacency
    degree = np.asarray(adj.sum(axis=1)).ravel()
    e = mesh.edges
    offsets = np.zeros_like(mesh.vertices)
    d = mesh.edge_vector(e[:, 0], e[:, 1])
    np.add.at(offsets, e[:, 0], d)
    np.add.at(offsets, e[:, 1], -d)
    offsets /= degree[:, None]
    nu = mesh.vertex_normals
    tangential = offsets - np.einsum("ij,ij->i", offsets, nu)[:, None] * nu
    return mesh.with_vertices(mesh.vertices + strength * tangential)


# ---------------------------------------------------------------------------
# tracked points


def _lerp(table: np.ndarray, u: np.ndarray) -> np.ndarray:
    i = np.clip(np.floor(u).astype(int), 0, len(table) - 2)
    w = u - i
    if table.ndim == 1:
        return (1.0 - w) * table[i] + w * table[i + 1]
    return (1.0 - w)[:, None] * table[i] + w[:, None] * table[i + 1]


def _closed_values(profile: AxiProfile, values: np.ndarray) -> np.ndarray:
    return np.append(values, values[0]) if profile.periodic else values


def _project(curve: np.ndarray, mer: np.ndarray) -> np.ndarray:
    """Fractional sample index of the closest point on a polyline."""
    a, b = curve[:-1], curve[1:]
    j = np.argmin(point_segment_distance_2d(mer, a, b), axis=1)
    seg = b[j] - a[j]
    t = np.einsum("ij,ij->i", mer - a[j], seg) / np.maximum(np.einsum("ij,ij->i", seg, seg), 1e-300)
    return j + np.clip(t, 0.0, 1.0)


class _Tracker:
    """Material sample positions followed across steps and redistributions."""

    def __init__(self, surface: Surface, count: int):
        if isinstance(surface, AxiProfile):
            s = surface.arclength()
            targets = s[-1] * np.arange(1, count + 1) / (count + 1)
            self.u = np.interp(targets, s, np.arange(len(s), dtype=float))
            self.vertices = None
        else:
            self.u = None
            self.vertices = np.unique(np.linspace(0, surface.size - 1, count).astype(int))

    def sample(self, surface: Surface, curv: Curvature):
        if self.vertices is not None:
            return surface.vertices[self.vertices], curv.H[self.vertices], curv.A[self.vertices]
        mer = _lerp(surface.polyline(), self.u)
        positions = np.column_stack([mer[:, 1], mer[:, 0], np.zeros(len(mer))])
        H = _lerp(_closed_values(surface, curv.H), self.u)
        A = _lerp(_closed_values(surface, curv.A), self.u)
        return positions, H, A

    def reproject(self, before: AxiProfile, after: AxiProfile) -> None:
        mer = _lerp(before.polyline(), self.u)
        self.u = _project(after.polyline(), mer)


# ---------------------------------------------------------------------------
# time estimation and evolution


def estimate_T(amax_trace: np.ndarray) -> Tuple[float, float, float]:
    """
    Extrapolate the singular time from a (t, max|A|) trace.

    (max|A|)^-2 is fitted linearly against t over the last decade of curvature
    growth, weighted by 1/(max|A|)^-2 so the residuals are relative and the
    late samples next to T carry the fit. Returns (T_est, typeI_constant,
    residual); the residual is in time units, the larger of the fit's relative
    scatter at the last sample and its disagreement with the secant through
    the last two samples.
    """
    trace = np.asarray(amax_trace, dtype=float)
    t, a = trace[:, 0], trace[:, 1]
    if (t >= t[-1] / 2.0).sum() < MIN_FIT_POINTS:
        raise PreconditionViolation(f"need {MIN_FIT_POINTS} trace points past half the run")
    window = a >= a.max() / 10.0
    window[-MIN_FIT_POINTS:] = True
    tw, y = t[window], a[window] ** -2.0
    slope, intercept = np.polyfit(tw, y, 1, w=1.0 / y)
    span = max(tw[-1] - tw[0], 1e-300)
    if slope >= -1e-9 * abs(y.mean()) / span:
        raise NoBlowup(f"no blow-up trend in max|A| (slope {slope:.3g})")
    T = -intercept / slope
    scatter = np.sqrt(np.mean(((y - (slope * tw + intercept)) / y) ** 2)) * y[-1] / abs(slope)
    secant = (y[-1] - y[-2]) / (tw[-1] - tw[-2])
    tail = tw[-1] - y[-1] / secant if secant < 0 else T
    residual = float(max(scatter, abs(T - tail)))
    before = t < T
    constant = float(np.max(a[before] * np.sqrt(2.0 * (T - t[before])))) if before.any() else float("inf")
    return float(T), constant, residual


def _singular_points(surface: Surface, curv: Curvature) -> np.ndarray:
    """Centres of curvature H/|A|^2 inward from the samples where |A| peaks."""
    hot = curv.A >= 0.9 * curv.A.max()
    shift = (curv.H[hot] / curv.A[hot] ** 2)[:, None] * curv.normals[hot]
    candidates = surface.points[hot] - shift
    merge = 1.0 / curv.A.max()
    if isinstance(surface, AxiProfile):
        # centres within one curvature radius of the axis lie on it by symmetry
        near_axis = np.hypot(candidates[:, 0], candidates[:, 2]) < merge
        candidates[near_axis, 0] = 0.0
        candidates[near_axis, 2] = 0.0
    tree = cKDTree(candidates)
    labels = -np.ones(len(candidates), dtype=int)
    centres = []
    for i in range(len(candidates)):
        if labels[i] >= 0:
            continue
        members = [j for j in tree.query_ball_point(candidates[i], merge) if labels[j] < 0]
        labels[members] = len(centres)
        centres.append(candidates[members].mean(axis=0))
    return np.array(centres)


def _advance(surface: Surface, dt: float, params: FlowParams, t: float) -> Tuple[Surface, float]:
    for _ in range(MAX_HALVINGS + 1):
        try:
            return step(surface, dt, params), dt
        except StepRejected as exc:
            logger.debug(f"step rejected at t={t:.6g}, dt={dt:.3g}: {exc}")
            dt /= 2.0
    raise SolverFailure(f"step rejected {MAX_HALVINGS + 1} times at t={t:.6g}")


def evolve(
    surface: Surface,
    params: Optional[FlowParams] = None,
    on_snapshot: Optional[Callable[[int, float, Surface], None]] = None,
) -> Tuple[FlowHistory, SingularReport]:
    """
    Run the flow until max|A| reaches the blow-up threshold or max_steps.

    ``on_snapshot`` is called every ``params.dump_every`` steps (and for the
    first and last snapshot) when dump_every > 0.
    """
    params = params or FlowParams()
    surface = surface.validate()
    curv = curvature(surface)
    a0 = float(curv.A.max())
    if a0 <= 0:
        raise NoBlowup("flat surface: no curvature to blow up")
    threshold = params.blowup_threshold or params.blowup_factor * a0
    if threshold <= 10.0 * a0:
        raise PreconditionViolation(f"blow-up threshold {threshold:.3g} must exceed 10 x max|A| = {10 * a0:.3g}")
    mean_convex = bool(curv.H.min() > 0)
    logger.info(f"Evolving {type(surface).__name__} with {surface.size} samples; "
                f"max|A|={a0:.4g}, threshold={threshold:.4g}, mean_convex={mean_convex}")

    tracker = _Tracker(surface, params.tracked_points)
    times, snapshots, amax, hmin = [], [], [], []
    positions, track_H, track_A = [], [], []

    def record(t: float, current: Surface, c: Curvature, index: int) -> None:
        times.append(t)
        snapshots.append(current)
        amax.append(float(c.A.max()))
        hmin.append(float(c.H.min()))
        p, h, a = tracker.sample(current, c)
        positions.append(p)
        track_H.append(h)
        track_A.append(a)
        if on_snapshot is not None and params.dump_every and index % params.dump_every == 0:
            on_snapshot(index, t, current)

    current, t, steps = surface, 0.0, 0
    record(t, current, curv, 0)
    reached = False
    while True:
        if amax[-1] >= threshold:
            reached = True
            break
        if steps >= params.max_steps:
            logger.warning(f"max_steps={params.max_steps} reached at t={t:.6g} before the threshold")
            break
        dt = _stable_limit(amax[-1], params.cfl)
        if isinstance(current, TriMesh):
            dt = min(dt, params.cfl * current.min_edge() ** 2)
        current, dt = _advance(current, dt, params, t)
        t += dt
        steps += 1
        if steps % params.redistribution_period == 0:
            current = _redistributed(current, params, tracker)
        curv = curvature(current)
        record(t, current, curv, steps)

    if on_snapshot is not None and params.dump_every and steps % params.dump_every != 0:
        on_snapshot(steps, t, current)

    history = FlowHistory(
        times=np.array(times),
        snapshots=snapshots,
        amax=np.array(amax),
        hmin=np.array(hmin),
        trajectories=Trajectories(np.array(positions), np.array(track_H), np.array(track_A)),
        threshold=threshold,
        mean_convex=mean_convex,
        reached_threshold=reached,
    )
    T, constant, residual = estimate_T(history.amax_trace)
    if T <= history.times[-1]:
        logger.warning(f"extrapolated T={T:.6g} does not exceed the last snapshot time {history.times[-1]:.6g}")
    report = SingularReport(T, residual, _singular_points(current, curv), constant, mean_convex, steps)
    if T - history.times[-1] < TRUST_MARGIN * residual:
        logger.info(f"last snapshots within {TRUST_MARGIN:g} x T_ci={residual:.2g} of T_est are not trusted for rescaling")
    logger.info(f"Flow stopped after {steps} steps at t={t:.6g}; T_est={T:.6g} (+/- {residual:.2g}), "
                f"type-I constant {constant:.4g}")
    return history, report


def _redistributed(current: Surface, params: FlowParams, tracker: _Tracker) -> Surface:
    if isinstance(current, TriMesh):
        try:
            return smooth_tangential(current).validate()
        except EmbeddingViolation as exc:
            logger.warning(f"tangential smoothing skipped: {exc}")
            return current
    try:
        moved = redistribute(current, params.adapt_weight)
    except (EmbeddingViolation, DegenerateGeometry, ValueError) as exc:
        logger.warning(f"redistribution skipped: {exc}")
        return current
    tracker.reproject(current, moved)
    return moved


# ---------------------------------------------------------------------------
# audits over a history


def monotone_violations(trace: np.ndarray, rel_tol: float = 0.01) -> np.ndarray:
    """Indices k where trace[k] drops below trace[k-1] by more than rel_tol."""
    values = np.asarray(trace, dtype=float)
    if values.ndim == 2:
        values = values[:, 1]
    drop = values[1:] < values[:-1] - rel_tol * np.abs(values[:-1])
    return np.nonzero(drop)[0] + 1


def trajectory_constant(history: FlowHistory, T: float) -> float:
    """Smallest K with |F(p,t) - p*| <= K (2(T - t))^1/2 over the tracked points, p* the final position."""
    p_star = history.trajectories.final
    dist = np.linalg.norm(history.trajectories.positions[:-1] - p_star[None], axis=-1)
    scale = np.sqrt(2.0 * np.maximum(T - history.times[:-1], 1e-300))
    return float((dist / scale[:, None]).max())


def comparison_gaps(inner: FlowHistory, outer: FlowHistory, n_theta: int = 32) -> np.ndarray:
    """
    Rows (t, min distance from the inner to the outer surface, inside flag) at
    the inner snapshot times both runs cover, using the nearest outer snapshot.
    """
    horizon = min(inner.times[-1], outer.times[-1])
    rows = []
    for t, snap in zip(inner.times, inner.snapshots):
        if t > horizon:
            break
        other = outer.snapshot_at(t)
        cloud = snap.cloud(n_theta)
        gap = float(other.distance_to(cloud).min())
        inside = bool(np.all(other.contains(cloud)))
        rows.append((t, gap, float(inside)))
    return np.array(rows)
