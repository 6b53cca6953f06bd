import numpy as np
import pytest

from app.core.exceptions import NotMeanConvex, PerturbationTooCoarse, PreconditionViolation
from app.models.schemas import PerturbationSpec
from app.services.flow import evolve
from app.services.geometry import graph_perturb
from app.services.noncollapse import (
    SpherePlacement,
    alpha_audit,
    alpha_trace,
    ball_clearance,
    place_spheres,
    sphere_survival,
)
from app.services.shapes import dumbbell_profile, sphere_profile
from src.experiments.runner import perturbation


def test_sphere_is_two_non_collapsed():
    audit = alpha_audit(sphere_profile(1.0, 200))
    assert np.allclose(audit.r_in, 1.0, rtol=2e-2)
    assert audit.alpha_min == pytest.approx(2.0, rel=2e-2)


def test_alpha_scales_out():
    small = alpha_audit(sphere_profile(0.5, 200)).alpha_min
    large = alpha_audit(sphere_profile(2.0, 200)).alpha_min
    assert small == pytest.approx(large, rel=1e-6)


def test_audit_needs_mean_convexity():
    bulge = dumbbell_profile(400, neck_radius=0.9, neck_width=0.1)
    with pytest.raises(NotMeanConvex):
        alpha_audit(bulge)


def test_alpha_stays_put_along_the_sphere_flow():
    history, _ = evolve(sphere_profile(1.0, 200))
    rows = alpha_trace(history, stride=max(1, len(history) // 10))
    assert np.allclose(rows[:, 1], 2.0, rtol=5e-2)


def test_sphere_lifespan():
    placement = SpherePlacement(r=2.0, t0=0.5)
    assert placement.lifespan == pytest.approx(1.0)
    assert sphere_survival(placement, 1.2)
    assert not sphere_survival(placement, 2.0)


def test_placement_needs_a_neck():
    history, _ = evolve(sphere_profile(1.0, 100))
    with pytest.raises(PreconditionViolation):
        place_spheres(history, history, None)


@pytest.mark.slow
def test_one_ball_in_each_bulb(dumbbell_runner):
    left, right = dumbbell_runner.place()
    T = dumbbell_runner.result.report.T_est
    assert (left.side, right.side) == ("left", "right")
    for ball in (left, right):
        assert ball.r > 0
        assert ball.gap >= ball.delta / 2.0
        assert sphere_survival(ball, T)
    assert left.center[1] < 0 < right.center[1]


@pytest.mark.slow
def test_far_perturbation_is_too_coarse(dumbbell_runner):
    history = dumbbell_runner.result.history
    shifted = history.final.transformed(1.0, np.array([0.0, 20.0, 0.0]))
    with pytest.raises(PerturbationTooCoarse):
        place_spheres(history, shifted, dumbbell_runner.result.neck)


def test_ball_inside_a_shrinking_sphere_stays_clear():
    history, report = evolve(sphere_profile(1.0, 200))
    ball = SpherePlacement(r=0.5, t0=0.0, center=np.zeros(3))
    rows = ball_clearance(ball, history, report.T_est)
    assert len(rows) > 0
    assert rows[-1, 0] < ball.lifespan
    # radii sqrt(1 - 4t) and sqrt(0.25 - 4t) never meet
    assert np.all(rows[:, 1] > 0)
    assert np.all(rows[:, 2] == 1.0)


@pytest.mark.slow
def test_dumbbell_alpha_and_min_H_never_drop(dumbbell_runner):
    rows = dumbbell_runner.audit_alpha()
    assert len(rows) > 1
    assert np.all(rows[:, 1] > 0)
    assert dumbbell_runner.result.violations == {"min_H": 0, "alpha_min": 0}


@pytest.mark.slow
def test_placed_balls_stay_disjoint_from_the_dumbbell(dumbbell_runner):
    placements = dumbbell_runner.place()
    for ball in placements:
        rows = dumbbell_runner.result.clearance[ball.side]
        assert len(rows) > 0
        assert np.all(rows[:, 1] > 0)
        assert np.all(rows[:, 2] == 1.0)


@pytest.mark.slow
def test_placement_beside_a_small_perturbation(dumbbell_runner):
    res = dumbbell_runner.result
    spec = PerturbationSpec(mode="bump", amplitude=1e-3)
    f = perturbation(res.base, spec, 0)
    assert np.abs(f.values).max() == pytest.approx(1e-3, rel=1e-2)
    perturbed, _ = evolve(graph_perturb(res.base, f), dumbbell_runner.config.flow)
    left, right = place_spheres(res.history, perturbed, res.neck)
    assert left.center[1] < 0 < right.center[1]
    for ball in (left, right):
        assert ball.gap >= ball.delta / 2.0
        assert sphere_survival(ball, res.report.T_est)
