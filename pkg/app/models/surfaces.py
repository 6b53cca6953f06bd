"""
Surface representations: axisymmetric profiles and closed triangle meshes
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial import cKDTree

from ..core.exceptions import EmbeddingViolation, PreconditionViolation
from ..utils.numerics import (
    points_in_polygon,
    polyline_distance_2d,
    polyline_self_intersects,
    segments_hit_triangles,
    solid_angle_winding,
)

Boundary = Literal["closed-cap", "periodic"]

# Symmetry axis of every profile (second coordinate).
AXIS = np.array([0.0, 1.0, 0.0])


def _frozen(array: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def to_meridian(points: np.ndarray) -> np.ndarray:
    """Map points in R^3 to (axis coordinate, distance to axis)."""
    points = np.atleast_2d(points)
    return np.column_stack([points[:, 1], np.hypot(points[:, 0], points[:, 2])])


@dataclass(frozen=True, eq=False)
class AxiProfile:
    """
    Surface of revolution about the e2 axis.

    A sample (x, r) is the point (r, x, 0); the surface is swept by rotating the
    generating curve around the axis. Closed-cap profiles start and end on the
    axis; periodic profiles repeat with ``period`` along the axis.
    """

    axis_samples: np.ndarray
    radius: np.ndarray
    boundary: Boundary = "closed-cap"
    period: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "axis_samples", _frozen(self.axis_samples))
        object.__setattr__(self, "radius", _frozen(self.radius))
        if self.axis_samples.shape != self.radius.shape or self.axis_samples.ndim != 1:
            raise EmbeddingViolation("axis_samples and radius must be 1-D arrays of equal length")
        if self.boundary == "periodic" and not self.period:
            raise EmbeddingViolation("periodic profiles need a positive period")

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def size(self) -> int:
        return len(self.radius)

    @property
    def points(self) -> np.ndarray:
        """Profile samples embedded in the theta = 0 half-plane."""
        return np.column_stack([self.radius, self.axis_samples, np.zeros(self.size)])

    def polyline(self, images: int = 0) -> np.ndarray:
        """Generating curve in (axis, radius) coordinates, closed over the period if periodic."""
        curve = np.column_stack([self.axis_samples, self.radius])
        if not self.periodic:
            return curve
        tiles = [curve + np.array([k * self.period, 0.0]) for k in range(-images, images + 1)]
        closing = curve[:1] + np.array([(images + 1) * self.period, 0.0])
        return np.vstack(tiles + [closing])

    def arclength(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.polyline(), axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def validate(self) -> "AxiProfile":
        """Check the representation invariants; raise EmbeddingViolation otherwise."""
        z, r = self.axis_samples, self.radius
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(r))):
            raise EmbeddingViolation("profile contains non-finite samples")
        if np.any(np.diff(z) <= 0):
            raise EmbeddingViolation("axis samples must be strictly increasing")
        if self.periodic:
            if np.any(r <= 0):
                raise EmbeddingViolation("periodic profile touches the axis")
            if z[-1] - z[0] >= self.period:
                raise EmbeddingViolation("periodic samples exceed one period")
        else:
            if r[0] != 0.0 or r[-1] != 0.0:
                raise EmbeddingViolation("closed-cap profile must end on the axis")
            if np.any(r[1:-1] <= 0):
                raise EmbeddingViolation("interior radius must be positive")
        if polyline_self_intersects(self.polyline()):
            raise EmbeddingViolation("generating curve self-intersects")
        return self

    def cloud(self, n_theta: int = 32) -> np.ndarray:
        """Revolved sample cloud; poles appear once."""
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        z, r = self.axis_samples, self.radius
        ring = r > 0
        pts = np.stack([
            np.outer(r[ring], np.cos(theta)),
            np.repeat(z[ring][:, None], n_theta, axis=1),
            np.outer(r[ring], np.sin(theta)),
        ], axis=-1).reshape(-1, 3)
        poles = np.column_stack([np.zeros((~ring).sum()), z[~ring], np.zeros((~ring).sum())])
        return np.vstack([pts, poles])

    def max_edge(self, n_theta: int = 32) -> float:
        meridian = np.linalg.norm(np.diff(self.polyline(), axis=0), axis=1).max()
        hoop = 2.0 * self.radius.max() * np.sin(np.pi / n_theta)
        return float(max(meridian, hoop))

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        """Distance from points in R^3 to the sampled surface of revolution."""
        mer = to_meridian(points)
        if self.periodic:
            z0 = self.axis_samples[0]
            mer = mer.copy()
            mer[:, 0] = z0 + np.mod(mer[:, 0] - z0, self.period)
            return polyline_distance_2d(mer, self.polyline(images=1))
        return polyline_distance_2d(mer, self.polyline())

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership in the enclosed region (boundary excluded up to round-off)."""
        mer = to_meridian(points)
        if self.periodic:
            z0 = self.axis_samples[0]
            zz = np.append(self.axis_samples, z0 + self.period)
            rr = np.append(self.radius, self.radius[0])
            bound = np.interp(z0 + np.mod(mer[:, 0] - z0, self.period), zz, rr)
            return mer[:, 1] < bound
        polygon = np.column_stack([self.radius, self.axis_samples])
        return points_in_polygon(mer[:, ::-1], polygon)

    def transformed(self, scale: float, center: np.ndarray) -> Union["AxiProfile", "TriMesh"]:
        """Image of the surface under p -> scale * (p - center)."""
        center = np.asarray(center, dtype=float)
        off_axis = np.hypot(center[0], center[2])
        if off_axis > 1e-12 * max(1.0, abs(center[1])):
            if self.periodic:
                raise PreconditionViolation("periodic profiles rescale about axis points only")
            return self.to_trimesh().transformed(scale, center)
        return AxiProfile(
            scale * (self.axis_samples - center[1]),
            scale * self.radius,
            self.boundary,
            None if self.period is None else scale * self.period,
        )

    def to_trimesh(self, n_theta: int = 32) -> "TriMesh":
        """Revolve a closed-cap profile into an oriented triangle mesh."""
        if self.periodic:
            raise PreconditionViolation("only closed-cap profiles revolve into closed meshes")
        z, r = self.axis_samples, self.radius
        rings = len(r) - 2
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        ring_pts = np.stack([
            np.outer(r[1:-1], np.cos(theta)),
            np.repeat(z[1:-1][:, None], n_theta, axis=1),
            np.outer(r[1:-1], np.sin(theta)),
        ], axis=-1).reshape(-1, 3)
        south = rings * n_theta
        north = south + 1
        vertices = np.vstack([ring_pts, [[0.0, z[0], 0.0]], [[0.0, z[-1], 0.0]]])

        def vid(i, k):
            return i * n_theta + np.mod(k, n_theta)

        k = np.arange(n_theta)
        faces = [np.column_stack([np.full(n_theta, south), vid(0, k + 1), vid(0, k)])]
        for i in range(rings - 1):
            faces.append(np.column_stack([vid(i, k), vid(i, k + 1), vid(i + 1, k + 1)]))
            faces.append(np.column_stack([vid(i, k), vid(i + 1, k + 1), vid(i + 1, k)]))
        faces.append(np.column_stack([np.full(n_theta, north), vid(rings - 1, k), vid(rings - 1, k + 1)]))
        mesh = TriMesh(vertices, np.vstack(faces))
        return mesh if mesh.signed_volume() > 0 else mesh.flipped()


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Closed oriented triangle mesh.

    ``period`` marks a flat doubly periodic sheet in the (x, y) plane: edge
    vectors then use the minimal-image convention and the sheet is closed
    topologically.
    """

    vertices: np.ndarray
    faces: np.ndarray
    period: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices))
        object.__setattr__(self, "faces", _frozen(self.faces, dtype=np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise EmbeddingViolation("vertices must have shape (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise EmbeddingViolation("faces must have shape (m, 3)")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise EmbeddingViolation("face index out of range")

    @property
    def points(self) -> np.ndarray:
        return self.vertices

    @property
    def size(self) -> int:
        return len(self.vertices)

    def wrap(self, vectors: np.ndarray) -> np.ndarray:
        """Minimal-image convention for periodic sheets; identity otherwise."""
        if self.period is None:
            return vectors
        out = np.array(vectors, dtype=float, copy=True)
        for axis, length in enumerate(self.period):
            out[..., axis] -= length * np.round(out[..., axis] / length)
        return out

    def edge_vector(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return self.wrap(self.vertices[j] - self.vertices[i])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        f = self.faces
        e = np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def adjacency(self) -> csr_matrix:
        e = self.edges
        n = self.size
        data = np.ones(2 * len(e))
        return coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    @cached_property
    def face_vectors(self) -> Tuple[np.ndarray, np.ndarray]:
        f = self.faces
        return self.edge_vector(f[:, 0], f[:, 1]), self.edge_vector(f[:, 0], f[:, 2])

    @cached_property
    def face_areas(self) -> np.ndarray:
        e1, e2 = self.face_vectors
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted outward vertex normals."""
        e1, e2 = self.face_vectors
        weighted = np.cross(e1, e2)
        acc = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(acc, self.faces[:, c], weighted)
        norms = np.linalg.norm(acc, axis=1, keepdims=True)
        return acc / np.where(norms > 0, norms, 1.0)

    def signed_volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.faces[:, ::-1], self.period)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces, self.period)

    def max_edge(self, n_theta: int = 0) -> float:
        e = self.edges
        return float(np.linalg.norm(self.edge_vector(e[:, 0], e[:, 1]), axis=1).max())

    def min_edge(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.edge_vector(e[:, 0], e[:, 1]), axis=1).min())

    def cloud(self, n_theta: int = 0) -> np.ndarray:
        return self.vertices

    def distance_to(self, points: np.ndarray) -> np.ndarray:
        d, _ = cKDTree(self.vertices).query(np.atleast_2d(points), k=1)
        return d

    def contains(self, points: np.ndarray) -> np.ndarray:
        if self.period is not None:
            raise PreconditionViolation("periodic sheets enclose no region")
        return solid_angle_winding(np.atleast_2d(points), self.vertices, self.faces) > 0.5

    def transformed(self, scale: float, center: np.ndarray) -> "TriMesh":
        period = None if self.period is None else tuple(scale * p for p in self.period)
        return TriMesh(scale * (self.vertices - np.asarray(center, dtype=float)), self.faces, period)

    def validate(self, check_intersections: bool = True) -> "TriMesh":
        """Closed manifold, consistent orientation, outward normals, no self-intersection."""
        f = self.faces
        directed = np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        if len(np.unique(directed, axis=0)) != len(directed):
            raise EmbeddingViolation("inconsistent orientation: a directed edge repeats")
        keys = directed[:, 0] * self.size + directed[:, 1]
        reverse = directed[:, 1] * self.size + directed[:, 0]
        if not np.all(np.isin(reverse, keys)):
            raise EmbeddingViolation("boundary edge: an edge bounds only one face")
        if np.any(self.face_areas <= 0):
            raise EmbeddingViolation("degenerate triangle")
        if self.period is None:
            if self.signed_volume() <= 0:
                raise EmbeddingViolation("normals point inward")
            if check_intersections and self.self_intersects():
                raise EmbeddingViolation("mesh self-intersects")
        return self

    def self_intersects(self) -> bool:
        """Triangle-pair scan over spatially close, vertex-disjoint faces."""
        tri = self.vertices[self.faces]
        centroids = tri.mean(axis=1)
        reach = 2.0 * np.linalg.norm(tri - centroids[:, None, :], axis=-1).max()
        pairs = cKDTree(centroids).query_pairs(reach, output_type="ndarray")
        if len(pairs) == 0:
            return False
        fa, fb = self.faces[pairs[:, 0]], self.faces[pairs[:, 1]]
        disjoint = ~np.any(fa[:, :, None] == fb[:, None, :], axis=(1, 2))
        pairs = pairs[disjoint]
        for first, second in ((0, 1), (1, 0)):
            seg_tri = tri[pairs[:, first]]
            other = tri[pairs[:, second]]
            for a, b in ((0, 1), (1, 2), (2, 0)):
                if np.any(segments_hit_triangles(seg_tri[:, a], seg_tri[:, b], other)):
                    return True
        return False


Surface = Union[AxiProfile, TriMesh]


@dataclass(frozen=True, eq=False)
class GraphFn:
    """Normal graph function f over the samples of a base surface."""

    base: Surface
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.zeros(self.base.size) if self.values is None else self.values
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.base.size,))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_function(cls, base: Surface, fn: Callable[[np.ndarray], np.ndarray]) -> "GraphFn":
        """Evaluate ``fn`` at the base sample points (n, 3)."""
        return cls(base, fn(base.points))

    def scaled(self, factor: float) -> "GraphFn":
        return GraphFn(self.base, factor * self.values)
