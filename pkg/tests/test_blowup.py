import numpy as np
import pytest

from app.core.exceptions import NoData, PreconditionViolation
from app.models.surfaces import AXIS
from app.services.blowup import (
    RescaledFlow,
    Window,
    classify,
    fit_cylinder,
    fit_sphere,
    rescale,
    rescaled_time,
    scale_factor,
    typeI_check,
)
from app.services.flow import evolve
from app.services.shapes import cylinder_profile, flat_strip, sphere_profile


@pytest.fixture(scope="module")
def sphere_run():
    return evolve(sphere_profile(1.0, 400))


@pytest.fixture(scope="module")
def cylinder_run():
    return evolve(cylinder_profile(1.0, 400))


def test_scale_factor_and_rescaled_time():
    assert scale_factor(1.0, 0.5) == pytest.approx(1.0)
    assert rescaled_time(1.0, 1.0 - np.exp(-2.0)) == pytest.approx(1.0)


def test_fit_sphere_recovers_center_and_radius():
    rng = np.random.default_rng(1)
    directions = rng.normal(size=(200, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    center = np.array([0.3, -0.2, 0.1])
    found, radius, deviation = fit_sphere(center + 1.5 * directions)
    assert np.allclose(found, center)
    assert radius == pytest.approx(1.5)
    assert deviation < 1e-9


def test_fit_cylinder_recovers_axis_and_radius():
    theta = np.linspace(0.0, 2.0 * np.pi, 24, endpoint=False)
    height = np.linspace(-4.0, 4.0, 33)
    tt, hh = np.meshgrid(theta, height)
    points = np.column_stack([2.0 * np.cos(tt).ravel() + 0.5, hh.ravel(), 2.0 * np.sin(tt).ravel()])
    center, axis, radius, deviation = fit_cylinder(points)
    assert abs(axis @ AXIS) == pytest.approx(1.0, abs=1e-9)
    assert radius == pytest.approx(2.0, rel=1e-6)
    assert center[0] == pytest.approx(0.5, abs=1e-6)
    assert deviation < 1e-6


def test_sphere_blows_up_to_round_sphere(sphere_run):
    history, report = sphere_run
    rescaled = rescale(history, report.singular_points[0], report.T_est)
    result = classify(rescaled)
    assert result.kind == "Sphere"
    assert result.radius == pytest.approx(np.sqrt(2.0), rel=1e-2)


def test_cylinder_blows_up_to_unit_cylinder(cylinder_run):
    history, report = cylinder_run
    center = np.array([0.0, np.pi, 0.0])
    result = classify(rescale(history, center, report.T_est))
    assert result.kind == "Cylinder"
    assert result.radius == pytest.approx(1.0, rel=1e-2)
    assert result.axis @ AXIS == pytest.approx(1.0, abs=1e-3)


def test_rescaled_snapshot_maps_back(sphere_run):
    history, report = sphere_run
    rescaled = rescale(history, report.singular_points[0], report.T_est)
    back = rescaled.unrescale(5)
    assert np.allclose(back.points, history.snapshots[5].points, atol=1e-9)


def test_rescale_needs_T_after_the_run(sphere_run):
    history, _ = sphere_run
    with pytest.raises(PreconditionViolation):
        rescale(history, np.zeros(3), history.times[-1])


def test_empty_window_raises_no_data(sphere_run):
    history, report = sphere_run
    rescaled = rescale(history, report.singular_points[0], report.T_est)
    far = Window(1.0, 1.0, AXIS.copy(), np.array([100.0, 0.0, 0.0]))
    with pytest.raises(NoData):
        classify(rescaled, far)


def test_sphere_is_type_one(sphere_run):
    history, report = sphere_run
    stable, constant = typeI_check(history, report.T_est)
    assert stable
    assert constant == pytest.approx(1.0, rel=1e-3)


def test_trusted_snapshots_keep_clear_of_T():
    times = np.array([0.0, 0.8, 0.98, 0.999])
    snaps = [sphere_profile(1.0, 20)] * len(times)
    rescaled = RescaledFlow(np.zeros(3), 1.0, times, rescaled_time(1.0, times), snaps, T_ci=0.01)
    assert list(rescaled.trusted()) == [0, 1]
    assert list(rescaled.trusted(margin=1.0)) == [0, 1, 2]
    exact = RescaledFlow(np.zeros(3), 1.0, times, rescaled_time(1.0, times), snaps)
    assert len(exact.trusted()) == len(times)


def test_too_few_trusted_snapshots(sphere_run):
    history, report = sphere_run
    rescaled = rescale(history, report.singular_points[0], report.T_est, T_ci=1.0)
    with pytest.raises(PreconditionViolation):
        classify(rescaled)


def test_flat_strip_is_not_a_tangent_flow():
    strip = flat_strip(resolution=32).transformed(1.0, np.array([np.pi, np.pi, 0.0]))
    times = np.array([0.0, 0.5, 0.75])
    rescaled = RescaledFlow(np.zeros(3), 1.0, times, rescaled_time(1.0, times), [strip] * 3)
    assert classify(rescaled).kind == "Unknown"


def _truncated(rescaled, stop):
    return RescaledFlow(rescaled.center, rescaled.T, rescaled.times[:stop], rescaled.s[:stop],
                        rescaled.snapshots[:stop], rescaled.T_ci)


@pytest.mark.slow
def test_dumbbell_blows_up_to_unit_cylinder(dumbbell_runner):
    result = dumbbell_runner.rescale()
    assert result.kind == "Cylinder"
    assert result.radius == pytest.approx(1.0, rel=2e-2)
    assert result.axis @ AXIS >= np.cos(np.deg2rad(2.0))
    assert all(kind == "Cylinder" for kind, _, _ in result.per_snapshot)


@pytest.mark.slow
def test_dumbbell_cylinder_holds_over_the_final_decade(dumbbell_runner):
    res = dumbbell_runner.result
    rescaled, history = res.rescaled, res.history
    trusted = rescaled.trusted()
    decade = trusted[history.amax[trusted] >= history.amax[trusted].max() / 10.0]
    window = Window(dumbbell_runner.config.neck.half_length, dumbbell_runner.config.neck.radius)
    stops = np.unique(np.linspace(decade[0], decade[-1], 5).astype(int)) + 1
    for stop in stops:
        result = classify(_truncated(rescaled, stop), window)
        assert result.kind == "Cylinder", f"s={rescaled.s[stop - 1]:.3f}"
        assert result.radius == pytest.approx(1.0, rel=2e-2), f"s={rescaled.s[stop - 1]:.3f}"


@pytest.mark.slow
def test_default_window_reaches_past_the_cylinder_region(dumbbell_runner):
    # at |xi| = 4 the neck still bends away from radius 1 by about 15 / 4s
    result = classify(dumbbell_runner.result.rescaled, Window())
    assert result.kind == "Unknown"
