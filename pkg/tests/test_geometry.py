import numpy as np
import pytest

from app.core.exceptions import EmbeddingViolation, PreconditionViolation
from app.models.surfaces import AxiProfile, GraphFn
from app.services.geometry import (
    ck_norm,
    curvature,
    graph_perturb,
    hausdorff_distance,
    set_hausdorff,
)
from app.services.shapes import cylinder_profile, dumbbell_profile, flat_strip, icosphere, sphere_profile, torus_mesh


def test_sphere_profile_curvature():
    curv = curvature(sphere_profile(1.0, 400))
    assert np.allclose(curv.H, 2.0, rtol=1e-3)
    assert np.allclose(curv.A, np.sqrt(2.0), rtol=1e-3)


def test_sphere_normals_point_outward():
    profile = sphere_profile(2.0, 100)
    normals = curvature(profile).normals
    assert np.allclose(normals, profile.points / 2.0, atol=1e-3)


def test_cylinder_profile_curvature():
    curv = curvature(cylinder_profile(0.5, 200))
    assert np.allclose(curv.H, 2.0)
    assert np.allclose(curv.A, 2.0)


def test_icosphere_curvature():
    curv = curvature(icosphere(1.0, 3))
    assert np.allclose(curv.H, 2.0, rtol=0.05)
    assert np.allclose(curv.A, np.sqrt(2.0), rtol=0.1)


def test_torus_curvature_matches_analytic_values():
    major, minor, n_minor = 1.0, 0.25, 24
    curv = curvature(torus_mesh(major, minor, 64, n_minor))
    outer = curv.H[0::n_minor]
    inner = curv.H[n_minor // 2::n_minor]
    assert np.allclose(outer, 1.0 / minor + 1.0 / (major + minor), rtol=0.05)
    assert np.allclose(inner, 1.0 / minor - 1.0 / (major - minor), rtol=0.05)


def test_dumbbell_is_mean_convex_and_pinched():
    profile = dumbbell_profile(400).validate()
    curv = curvature(profile)
    assert curv.H.min() > 0
    middle = np.argmin(np.abs(profile.axis_samples))
    assert profile.radius[middle] == pytest.approx(0.3, abs=1e-2)


def test_constant_graph_offsets_the_sphere():
    base = sphere_profile(1.0, 200)
    moved = graph_perturb(base, GraphFn(base, 0.1))
    assert np.allclose(np.linalg.norm(moved.points, axis=1), 1.1, rtol=1e-3)
    assert moved.radius[0] == 0.0 and moved.radius[-1] == 0.0


def test_zero_graph_returns_the_base():
    base = sphere_profile(1.0, 50)
    assert graph_perturb(base, GraphFn(base)) is base


def test_graph_on_mesh_moves_along_normals():
    base = icosphere(1.0, 2)
    moved = graph_perturb(base, GraphFn(base, -0.2))
    assert np.allclose(np.linalg.norm(moved.vertices, axis=1), 0.8, rtol=1e-3)


def test_ck_norm_of_constant_function():
    base = sphere_profile(1.0, 100)
    f = GraphFn(base, -0.3)
    assert ck_norm(f, 0) == pytest.approx(0.3)
    assert ck_norm(f, 2) == pytest.approx(0.3)


def test_ck_norm_sees_derivatives():
    base = cylinder_profile(1.0, 400)
    f = GraphFn.from_function(base, lambda p: 0.01 * np.cos(2.0 * p[:, 1]))
    assert ck_norm(f, 0) == pytest.approx(0.01, rel=1e-3)
    assert ck_norm(f, 2) == pytest.approx(0.04, rel=1e-2)


def test_ck_norm_on_a_flat_sheet():
    base = flat_strip(resolution=64)
    f = GraphFn.from_function(base, lambda p: 0.01 * np.cos(2.0 * p[:, 0]))
    assert ck_norm(f, 0) == pytest.approx(0.01)
    assert ck_norm(f, 1) == pytest.approx(0.02, rel=1e-2)
    assert ck_norm(f, 2) == pytest.approx(0.04, rel=1e-2)


def test_ck_norm_rejects_high_order():
    base = sphere_profile(1.0, 20)
    with pytest.raises(PreconditionViolation):
        ck_norm(GraphFn(base, 0.1), 3)


def test_hausdorff_between_concentric_spheres():
    result = hausdorff_distance(sphere_profile(1.0, 400), sphere_profile(1.2, 400))
    assert result.distance == pytest.approx(0.2, abs=1e-3)


def test_graph_distance_bounded_by_sup_norm():
    """d_H(M, graph of f) <= ||f||_C0 plus the sampling slack, over random smooth graphs."""
    rng = np.random.default_rng(0)
    for base in (sphere_profile(1.0, 200), dumbbell_profile(200)):
        for _ in range(50):
            a, k, phase = rng.uniform(-0.05, 0.05), rng.integers(1, 4), rng.uniform(0, np.pi)
            f = GraphFn.from_function(base, lambda p: a * np.cos(k * p[:, 1] + phase))
            moved = graph_perturb(base, f)
            result = hausdorff_distance(base, moved)
            assert result.distance <= ck_norm(f, 0) + result.slack


def test_set_hausdorff():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    y = np.array([[0.0, 0.0, 0.0]])
    assert set_hausdorff(x, y) == pytest.approx(1.0)


def test_unsorted_profile_is_rejected():
    profile = AxiProfile(np.array([0.0, 0.5, 0.4, 1.0]), np.array([0.0, 0.3, 0.3, 0.0]))
    with pytest.raises(EmbeddingViolation):
        profile.validate()


def test_self_intersecting_profile_is_rejected():
    z = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    r = np.array([0.0, 1.0, -0.5, 1.0, 0.0])
    with pytest.raises(EmbeddingViolation):
        AxiProfile(z, r).validate()
