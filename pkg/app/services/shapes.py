"""
Builders for the base surfaces used by the scenarios
"""

from typing import Sequence

import numpy as np

from ..models.surfaces import AxiProfile, TriMesh
from ..utils.numerics import tangent_frame


def sphere_profile(radius: float = 1.0, resolution: int = 400, center: float = 0.0) -> AxiProfile:
    """Round sphere, samples equally spaced in polar angle."""
    theta = np.pi * np.arange(resolution + 1) / resolution
    z = center - radius * np.cos(theta)
    r = radius * np.sin(theta)
    r[0] = r[-1] = 0.0
    return AxiProfile(z, r, "closed-cap")


def cylinder_profile(radius: float = 1.0, resolution: int = 400, period: float = 2.0 * np.pi) -> AxiProfile:
    z = period * np.arange(resolution) / resolution
    return AxiProfile(z, np.full(resolution, float(radius)), "periodic", period)


def dumbbell_profile(
    resolution: int = 400,
    half_length: float = 3.0,
    neck_radius: float = 0.3,
    neck_width: float = 0.8,
    lobe_radius: float = 1.0,
) -> AxiProfile:
    """
    Symmetric dumbbell: a prolate lobe envelope pinched by a Gaussian neck.

    r(z) = sin(theta) * g(z), z = -half_length * cos(theta),
    g(z) = lobe_radius * (1 - (1 - neck_radius / lobe_radius) * exp(-z^2 / neck_width^2)).
    The default parameters give a mean-convex surface whose neck pinches first.
    """
    theta = np.pi * np.arange(resolution + 1) / resolution
    z = -half_length * np.cos(theta)
    depth = 1.0 - neck_radius / lobe_radius
    g = lobe_radius * (1.0 - depth * np.exp(-(z / neck_width) ** 2))
    r = np.sin(theta) * g
    r[0] = r[-1] = 0.0
    return AxiProfile(z, r, "closed-cap")


def icosphere(radius: float = 1.0, subdivisions: int = 3, center: Sequence[float] = (0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    vertices = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = vertices[a] + vertices[b]
                vertices.append(m / np.linalg.norm(m))
                cache[key] = len(vertices) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    mesh = TriMesh(radius * np.array(vertices) + np.asarray(center, dtype=float), np.array(faces))
    return mesh if mesh.signed_volume() > 0 else mesh.flipped()


def torus_mesh(
    major: float = 1.0,
    minor: float = 0.25,
    n_major: int = 48,
    n_minor: int = 16,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    normal: Sequence[float] = (0.0, 0.0, 1.0),
) -> TriMesh:
    """Torus with core circle of radius ``major`` in the plane orthogonal to ``normal``."""
    n = np.asarray(normal, dtype=float)
    n /= np.linalg.norm(n)
    e1, e2 = tangent_frame(n)
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    radial = np.cos(uu)[..., None] * e1 + np.sin(uu)[..., None] * e2
    pts = (np.asarray(center, dtype=float) + (major + minor * np.cos(vv))[..., None] * radial
           + (minor * np.sin(vv))[..., None] * n)

    def vid(i, j):
        return np.mod(i, n_major) * n_minor + np.mod(j, n_minor)

    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i, j = i.ravel(), j.ravel()
    faces = np.vstack([
        np.column_stack([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)]),
        np.column_stack([vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)]),
    ])
    mesh = TriMesh(pts.reshape(-1, 3), faces)
    return mesh if mesh.signed_volume() > 0 else mesh.flipped()


def flat_strip(length: float = 2.0 * np.pi, resolution: int = 32) -> TriMesh:
    """Flat doubly periodic sheet z = 0 with period ``length`` in x and y."""
    h = length / resolution
    i, j = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    vertices = np.column_stack([i.ravel() * h, j.ravel() * h, np.zeros(i.size)])

    def vid(a, b):
        return np.mod(a, resolution) * resolution + np.mod(b, resolution)

    a, b = i.ravel(), j.ravel()
    faces = np.vstack([
        np.column_stack([vid(a, b), vid(a + 1, b), vid(a + 1, b + 1)]),
        np.column_stack([vid(a, b), vid(a + 1, b + 1), vid(a, b + 1)]),
    ])
    return TriMesh(vertices, faces, period=(length, length))
