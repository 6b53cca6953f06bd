import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from app.core.exceptions import DegenerateGeometry, Indeterminate, NotLinked, PreconditionViolation
from app.models.schemas import FlowParams
from app.models.surfaces import AXIS
from app.services.flow import evolve
from app.services.neck import NeckCertificate, NeckWindow
from app.services.shapes import torus_mesh
from app.services.topology import (
    Loop,
    disk_crossings,
    gauss_linking,
    link_audit,
    linking_number,
    neck_loop,
    transversal_loop,
)

CERTIFIED = NeckCertificate(s=0.0, t=0.0, u=np.zeros(1), u_c2=0.0, valid=True)


def circle(center, e1, e2, radius=1.0, n=64):
    phi = 2.0 * np.pi * np.arange(n) / n
    e1, e2 = np.asarray(e1, dtype=float), np.asarray(e2, dtype=float)
    return Loop(np.asarray(center, dtype=float) + radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))


def neck_window():
    # disk radius 1 at t = 0
    return NeckWindow(np.array([0.0, 0.05, 0.0]), AXIS, T=1.0 / 32.0)


def threaded_torus():
    return torus_mesh(1.0, 0.2, 48, 12, center=(1.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0))


def test_hopf_link():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    b = circle([1, 0, 0], [1, 0, 0], [0, 0, 1])
    integral = gauss_linking(a, b)
    assert abs(integral) == pytest.approx(1.0, abs=1e-6)
    value = linking_number(a, b)
    assert abs(value) == 1
    assert linking_number(a, b.reversed()) == -value


def test_separated_circles_are_unlinked():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    b = circle([5, 0, 0], [1, 0, 0], [0, 0, 1])
    assert linking_number(a, b) == 0


def test_touching_loops_are_indeterminate():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    b = circle([2, 0, 0], [1, 0, 0], [0, 1, 0])
    with pytest.raises(Indeterminate):
        linking_number(a, b)


def test_self_intersecting_loop_is_rejected():
    bow_tie = Loop(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    with pytest.raises(DegenerateGeometry):
        bow_tie.validate()


def test_neck_loop_needs_a_valid_certificate():
    with pytest.raises(PreconditionViolation):
        neck_loop(neck_window(), 0.0, None)
    failed = NeckCertificate(s=0.0, t=0.0, u=np.zeros(1), u_c2=1.0, valid=False)
    with pytest.raises(PreconditionViolation):
        neck_loop(neck_window(), 0.0, failed)


def test_neck_loop_bounds_the_disk():
    window = neck_window()
    loop = neck_loop(window, 0.0, CERTIFIED)
    radius = np.linalg.norm(loop.points - window.center, axis=1)
    assert np.allclose(radius, window.disk_radius(0.0))
    assert np.allclose((loop.points - window.center) @ window.axis, 0.0)


def test_transversal_loop_crosses_the_disk_once():
    window = neck_window()
    loop = transversal_loop(threaded_torus(), window, 0.0)
    assert loop.vertices is not None
    assert abs(linking_number(loop, neck_loop(window, 0.0, CERTIFIED))) == 1


def test_torus_away_from_the_disk_is_not_linked():
    far = torus_mesh(1.0, 0.2, 48, 12, center=(10.0, 0.0, 0.0))
    with pytest.raises(NotLinked):
        transversal_loop(far, neck_window(), 0.0)


def test_link_survives_the_torus_flow():
    window = neck_window()
    torus = threaded_torus()
    loop = transversal_loop(torus, window, 0.0)
    history, _ = evolve(torus, FlowParams(blowup_factor=20.0))
    audit = link_audit(history, loop, window, CERTIFIED, seed=3)
    assert audit.preserved
    assert len(audit.rows) == len(audit.times)
    assert np.all(audit.min_distance > 0)
    assert np.all(np.abs(audit.crossings) == 1)
    assert all(row["parity"] == 1 for row in audit.rows)


def test_link_audit_needs_a_mesh_loop():
    history, _ = evolve(threaded_torus(), FlowParams(blowup_factor=20.0))
    loop = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    with pytest.raises(PreconditionViolation):
        link_audit(history, loop, neck_window(), CERTIFIED)


def test_cable_winds_three_times():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0], n=400)
    phi = 2.0 * np.pi * np.arange(400) / 400
    ring = 1.0 + 0.3 * np.cos(3.0 * phi)
    b = Loop(np.column_stack([ring * np.cos(phi), ring * np.sin(phi), 0.3 * np.sin(3.0 * phi)]))
    assert abs(linking_number(a, b)) == 3


def test_link_is_invariant_under_rigid_motion():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    b = circle([1, 0, 0], [1, 0, 0], [0, 0, 1])
    turn = Rotation.from_euler("xyz", [30.0, 45.0, 60.0], degrees=True)
    shift = np.array([2.0, -1.0, 0.5])
    moved_a = Loop(turn.apply(a.points) + shift)
    moved_b = Loop(turn.apply(b.points) + shift)
    assert linking_number(moved_a, moved_b) == linking_number(a, b)


def test_link_is_invariant_under_scaling():
    a = circle([0, 0, 0], [1, 0, 0], [0, 1, 0])
    b = circle([1, 0, 0], [1, 0, 0], [0, 0, 1])
    value = linking_number(a, b)
    assert linking_number(Loop(2.5 * a.points), Loop(2.5 * b.points)) == value
    pivot = np.array([1.0, 0.0, 0.2])
    shrunk = Loop(pivot + 0.8 * (b.points - pivot))
    assert linking_number(a, shrunk) == value


def test_transversal_loop_passes_the_disk_once_with_sign():
    window = neck_window()
    loop = transversal_loop(threaded_torus(), window, 0.0)
    assert disk_crossings(loop, window, 0.0) == 1
    assert disk_crossings(loop.reversed(), window, 0.0) == -1
