"""
Curvature, normal graphs, C^k norms and Hausdorff distances
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..core.exceptions import DegenerateGeometry, PreconditionViolation
from ..models.surfaces import AxiProfile, GraphFn, Surface, TriMesh
from ..utils.numerics import quadratic_fit, tangent_frame

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProfileGeometry:
    """Discrete differential geometry of a generating curve, per sample."""
    tangent: np.ndarray   # (m, 2) in (axis, radius) components
    normal: np.ndarray    # (m, 2) outward
    k1: np.ndarray        # meridian curvature, positive when convex
    k2: np.ndarray        # rotational curvature n_r / r
    speed2: np.ndarray    # |X_u|^2 for unit parameter spacing
    second: np.ndarray    # X_uu


@dataclass(frozen=True)
class Curvature:
    """Per-sample mean curvature H = k1 + k2, |A| and outward unit normal."""
    H: np.ndarray
    A: np.ndarray
    normals: np.ndarray


@dataclass(frozen=True)
class HausdorffResult:
    distance: float
    slack: float
    directed_ab: float
    directed_ba: float


def _with_ghosts(z: np.ndarray, r: np.ndarray, periodic: bool, period: Optional[float]):
    if periodic:
        zp = np.concatenate([[z[-1] - period], z, [z[0] + period]])
        rp = np.concatenate([[r[-1]], r, [r[0]]])
    else:
        # reflection across the axis at both poles
        zp = np.concatenate([[z[1]], z, [z[-2]]])
        rp = np.concatenate([[-r[1]], r, [-r[-2]]])
    return zp, rp


def profile_geometry(z: np.ndarray, r: np.ndarray, periodic: bool = False,
                     period: Optional[float] = None) -> ProfileGeometry:
    """
    Centred differences on the sample index of the generating curve.

    The curvature vector X_uu / |X_u|^2 is invariant under the parameter spacing,
    so unit spacing is used. At the poles the rotational curvature equals the
    meridian one.
    """
    zp, rp = _with_ghosts(z, r, periodic, period)
    xu = np.column_stack([(zp[2:] - zp[:-2]) / 2.0, (rp[2:] - rp[:-2]) / 2.0])
    xuu = np.column_stack([zp[2:] - 2.0 * z + zp[:-2], rp[2:] - 2.0 * r + rp[:-2]])
    speed2 = np.einsum("ij,ij->i", xu, xu)
    if np.any(speed2 <= 0):
        raise DegenerateGeometry("coincident profile samples")
    tangent = xu / np.sqrt(speed2)[:, None]
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    k1 = -np.einsum("ij,ij->i", xuu, normal) / speed2
    k2 = np.empty_like(k1)
    if periodic:
        if np.any(r <= 0):
            raise DegenerateGeometry("zero radius at an interior sample")
        k2[:] = tangent[:, 0] / r
    else:
        if np.any(r[1:-1] <= 0):
            raise DegenerateGeometry("zero radius at an interior sample")
        k2[1:-1] = tangent[1:-1, 0] / r[1:-1]
        k2[0], k2[-1] = k1[0], k1[-1]
    return ProfileGeometry(tangent, normal, k1, k2, speed2, xuu)


def profile_normals_3d(geom: ProfileGeometry) -> np.ndarray:
    """Outward normals of profile samples in the theta = 0 half-plane."""
    return np.column_stack([geom.normal[:, 1], geom.normal[:, 0], np.zeros(len(geom.k1))])


def cotan_laplacian(mesh: TriMesh):
    """
    Cotangent-weight Laplace-Beltrami of the vertex positions and mixed areas.

    Returns (delta_x, area) with delta_x = -H nu at every vertex.
    """
    f = mesh.faces
    corners = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    cot = np.empty((len(f), 3))
    for c, (a, b, d) in enumerate(corners):
        u = mesh.edge_vector(f[:, a], f[:, b])
        v = mesh.edge_vector(f[:, a], f[:, d])
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        if np.any(cross <= 1e-300):
            raise DegenerateGeometry("degenerate triangle")
        cot[:, c] = np.einsum("ij,ij->i", u, v) / cross

    delta = np.zeros_like(mesh.vertices)
    area = np.zeros(mesh.size)
    face_area = mesh.face_areas
    obtuse = cot < 0
    any_obtuse = obtuse.any(axis=1)
    for c, (a, b, d) in enumerate(corners):
        # corner a sees opposite edge (b, d)
        w = 0.5 * cot[:, c]
        e = mesh.edge_vector(f[:, b], f[:, d])
        np.add.at(delta, f[:, b], w[:, None] * e)
        np.add.at(delta, f[:, d], -w[:, None] * e)

        # Voronoi share of corner a: edges (a, b) opposite d and (a, d) opposite b
        ab = mesh.edge_vector(f[:, a], f[:, b])
        ad = mesh.edge_vector(f[:, a], f[:, d])
        cb, cd = corners.index((b, d, a)), corners.index((d, a, b))
        voronoi = (np.einsum("ij,ij->i", ab, ab) * cot[:, cd] + np.einsum("ij,ij->i", ad, ad) * cot[:, cb]) / 8.0
        share = np.where(any_obtuse, np.where(obtuse[:, c], face_area / 2.0, face_area / 4.0), voronoi)
        np.add.at(area, f[:, a], share)
    return delta / area[:, None], area


def _mesh_second_fundamental_norm(mesh: TriMesh, normals: np.ndarray) -> np.ndarray:
    out = np.empty(mesh.size)
    for i in range(mesh.size):
        ring = mesh.neighbors(i)
        if len(ring) < 5:
            ring = np.unique(np.concatenate([mesh.neighbors(j) for j in ring]))
            ring = ring[ring != i]
        e1, e2 = tangent_frame(normals[i])
        d = mesh.edge_vector(np.full(len(ring), i), ring)
        uv = np.column_stack([d @ e1, d @ e2])
        _, hess = quadratic_fit(uv, d @ normals[i])
        out[i] = np.linalg.norm(hess)
    return out


def curvature(surface: Surface) -> Curvature:
    """H, |A| and outward normal at every sample (profile) or vertex (mesh)."""
    if isinstance(surface, AxiProfile):
        geom = profile_geometry(surface.axis_samples, surface.radius, surface.periodic, surface.period)
        return Curvature(geom.k1 + geom.k2, np.hypot(geom.k1, geom.k2), profile_normals_3d(geom))
    delta, _ = cotan_laplacian(surface)
    normals = surface.vertex_normals
    H = -np.einsum("ij,ij->i", delta, normals)
    return Curvature(H, _mesh_second_fundamental_norm(surface, normals), normals)


def graph_perturb(base: Surface, f: GraphFn) -> Surface:
    """The surface {x + f(x) nu(x)}; validated before it is returned."""
    if f.base is not base and f.base.size != base.size:
        raise PreconditionViolation("graph function lives on a different base")
    if not np.any(f.values):
        return base
    if isinstance(base, AxiProfile):
        nu = curvature(base).normals
        moved = AxiProfile(
            base.axis_samples + f.values * nu[:, 1],
            base.radius + f.values * nu[:, 0],
            base.boundary,
            base.period,
        )
        return moved.validate()
    moved = base.with_vertices(base.vertices + f.values[:, None] * base.vertex_normals)
    return moved.validate()


def _profile_derivatives(f: GraphFn):
    base: AxiProfile = f.base
    s = base.arclength()
    vals, rad = f.values, base.radius
    if base.periodic:
        total = s[-1]
        s_ext = np.concatenate([[s[-2] - total], s[:-1], [total]])
        v_ext = np.concatenate([[vals[-1]], vals, [vals[0]]])
        r_ext = np.concatenate([[rad[-1]], rad, [rad[0]]])
        fs = np.gradient(v_ext, s_ext)[1:-1]
        fss = np.gradient(np.gradient(v_ext, s_ext), s_ext)[1:-1]
        rs = np.gradient(r_ext, s_ext)[1:-1]
    else:
        fs = np.gradient(vals, s)
        fss = np.gradient(fs, s)
        rs = np.gradient(rad, s)
    rotational = np.empty_like(fs)
    interior = rad > 0
    rotational[interior] = fs[interior] * rs[interior] / rad[interior]
    rotational[~interior] = fss[~interior]
    return np.abs(fs), np.hypot(fss, rotational)


def _mesh_derivatives(f: GraphFn):
    mesh: TriMesh = f.base
    normals = mesh.vertex_normals
    grad = np.empty(mesh.size)
    hess = np.empty(mesh.size)
    for i in range(mesh.size):
        ring = mesh.neighbors(i)
        if len(ring) < 5:
            ring = np.unique(np.concatenate([mesh.neighbors(j) for j in ring]))
            ring = ring[ring != i]
        e1, e2 = tangent_frame(normals[i])
        d = mesh.edge_vector(np.full(len(ring), i), ring)
        g, h = quadratic_fit(np.column_stack([d @ e1, d @ e2]), f.values[ring] - f.values[i])
        grad[i], hess[i] = np.linalg.norm(g), np.linalg.norm(h)
    return grad, hess


def ck_norm(f: GraphFn, k: int) -> float:
    """max over orders j <= k of sup |D^j f|, derivatives in the base parameterization."""
    if k not in (0, 1, 2):
        raise PreconditionViolation("C^k norms are defined for k <= 2")
    norms = [float(np.abs(f.values).max())]
    if k >= 1:
        grad, hess = (_profile_derivatives if isinstance(f.base, AxiProfile) else _mesh_derivatives)(f)
        norms.append(float(grad.max()))
        if k == 2:
            norms.append(float(hess.max()))
    return max(norms)


def hausdorff_distance(a: Surface, b: Surface, n_theta: int = 32) -> HausdorffResult:
    """Symmetric Hausdorff distance between sample sets, with edge-length slack."""
    pts_a = a.points if isinstance(a, AxiProfile) and isinstance(b, AxiProfile) else a.cloud(n_theta)
    pts_b = b.points if isinstance(a, AxiProfile) and isinstance(b, AxiProfile) else b.cloud(n_theta)
    ab = float(b.distance_to(pts_a).max())
    ba = float(a.distance_to(pts_b).max())
    slack = max(a.max_edge(n_theta), b.max_edge(n_theta))
    return HausdorffResult(max(ab, ba), slack, ab, ba)


def set_hausdorff(x: np.ndarray, y: np.ndarray) -> float:
    """Hausdorff distance between two finite point sets."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    return float(max(cKDTree(y).query(x)[0].max(), cKDTree(x).query(y)[0].max()))
