import csv
import json
import logging
from pathlib import Path

import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import ConfigurationError, StageError
from app.models.schemas import BaseSurfaceSpec, ExperimentRecord, PerturbationSpec, ScenarioConfig
from app.services.shapes import cylinder_profile, icosphere, sphere_profile
from app.utils.logger import attach_run_log, setup_logger
from cli import main as cli_main
from src.etl.artifacts import (
    ArtifactStore,
    load_config,
    read_obj,
    read_profile_csv,
    read_surface,
    write_obj,
    write_profile_csv,
)
from src.experiments.runner import (
    ContinuityExperiment,
    ScenarioRunner,
    empirical_rate,
    limit_bound,
    perturbation,
    run_scenario,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def sphere_config(out_dir, resolution=100, **perturbation):
    return ScenarioConfig(
        name="sphere",
        base=BaseSurfaceSpec(kind="sphere", resolution=resolution),
        perturbation=PerturbationSpec(**perturbation),
        output_dir=str(out_dir),
    )


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.json")):
        config = load_config(path)
        assert config.name == path.stem


def test_bad_config_is_a_configuration_error(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"base": {"kind": "sphere", "resolution": 2}}))
    for path in (broken, invalid, tmp_path / "missing.json"):
        with pytest.raises(ConfigurationError):
            load_config(path)


def test_inward_constant_must_stay_inside_the_sphere():
    with pytest.raises(ValueError):
        ScenarioConfig(perturbation=PerturbationSpec(amplitude=-1.0))


def test_perturbation_shapes():
    base = sphere_profile(1.0, 50)
    constant = perturbation(base, PerturbationSpec(amplitude=-0.5), 2)
    assert np.allclose(constant.values, -0.125)

    bump = perturbation(base, PerturbationSpec(mode="bump", amplitude=0.01, bump_center=0.0), 1)
    assert bump.values.max() == pytest.approx(0.005)
    assert bump.values.min() > 0

    spec = PerturbationSpec(mode="cosine", amplitude=0.02, wavenumber=3.0)
    wave = perturbation(base, spec, 0)
    assert np.allclose(wave.values, 0.02 * np.cos(3.0 * base.points[:, 1]))


def test_limit_bound():
    assert limit_bound(0.01) == pytest.approx(0.61)
    assert limit_bound(0.0) == 0.0


def test_empirical_rate_is_the_log_log_slope():
    records = [ExperimentRecord(n=n, amplitude=2.0 ** -n, c2_norm=2.0 ** -n, T_gap=0.3 * 4.0 ** -n)
               for n in range(4)]
    assert empirical_rate(records) == pytest.approx(2.0)
    records[1].status = "failed"
    assert empirical_rate(records[:2]) is None


def test_report_envelope(tmp_path):
    store = ArtifactStore(tmp_path)
    path = store.json("scenario", {"T": np.float64(0.25), "points": np.arange(3), "ok": np.bool_(True)})
    document = json.loads(path.read_text())
    assert document["schema_version"] == settings.SCHEMA_VERSION
    assert document["kind"] == "scenario"
    assert document["payload"] == {"T": 0.25, "points": [0, 1, 2], "ok": True}
    assert store.written == [path]


def test_run_log_mirrors_services_and_runners(tmp_path):
    setup_logger("app")
    path = attach_run_log(tmp_path, "run.log")
    try:
        logging.getLogger("app.services.flow").info("service line")
        logging.getLogger("src.experiments.runner").info("runner line")
        text = path.read_text()
        assert "service line" in text and "runner line" in text
        assert attach_run_log(tmp_path, "run.log") == path
    finally:
        for name in ("app", "src"):
            for handler in [h for h in logging.getLogger(name).handlers if isinstance(h, logging.FileHandler)]:
                logging.getLogger(name).removeHandler(handler)
                handler.close()


def test_profile_csv_round_trip(tmp_path):
    for profile in (sphere_profile(1.0, 40), cylinder_profile(1.0, 40)):
        back = read_profile_csv(write_profile_csv(profile, tmp_path / "profile.csv"))
        assert back.boundary == profile.boundary
        assert np.array_equal(back.axis_samples, profile.axis_samples)
        assert np.array_equal(back.radius, profile.radius)


def test_obj_round_trip(tmp_path):
    mesh = icosphere(1.0, 1)
    back = read_obj(write_obj(mesh, tmp_path / "mesh.obj"))
    assert np.array_equal(back.faces, mesh.faces)
    assert np.array_equal(back.vertices, mesh.vertices)


def test_unknown_surface_format(tmp_path):
    with pytest.raises(ConfigurationError):
        read_surface(tmp_path / "surface.ply")


def test_empty_schedule_writes_an_empty_table(tmp_path):
    config = sphere_config(tmp_path, n_min=0, n_max=-1)
    assert ContinuityExperiment(config).run() == []
    with open(tmp_path / "records.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows == [list(ExperimentRecord.model_fields)]
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["kind"] == "continuity"
    assert report["payload"]["records"] == []


def test_sphere_scenario_takes_the_shrink_path(tmp_path):
    result = run_scenario(sphere_config(tmp_path))
    assert result.blowup.kind == "Sphere"
    assert result.report.T_est == pytest.approx(0.25, rel=1e-2)
    for name in ("report.json", "traces/curvature.csv", "traces/alpha.csv", "snapshots/final.csv"):
        assert (tmp_path / name).exists()
    payload = json.loads((tmp_path / "report.json").read_text())["payload"]
    assert payload["blowup"]["kind"] == "Sphere"


def test_stage_errors_carry_the_stage(tmp_path):
    runner = ScenarioRunner(sphere_config(tmp_path))
    with pytest.raises(StageError) as info:
        runner.neck()
    assert info.value.stage == "neck"


def test_scenario_outputs_are_deterministic(tmp_path):
    first = run_scenario(sphere_config(tmp_path / "a"))
    second = run_scenario(sphere_config(tmp_path / "b"))
    names = sorted(p.relative_to(tmp_path / "a") for p in first.files)
    assert names == sorted(p.relative_to(tmp_path / "b") for p in second.files)
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_rejects_a_bad_config(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("[]")
    assert cli_main(["simulate", str(broken)]) == 2


def test_cli_runs_a_stage_with_overrides(tmp_path):
    config = tmp_path / "sphere.json"
    config.write_text(json.dumps({"name": "cli", "base": {"kind": "sphere"}}))
    out = tmp_path / "out"
    assert cli_main(["simulate", str(config), "--out", str(out), "--resolution", "60", "--dump-every", "50"]) == 0
    assert (out / "report.json").exists()
    assert (out / "snapshots" / "base_00000.csv").exists()
    assert read_profile_csv(out / "snapshots" / "base_00000.csv").size == 61


def test_cli_stage_failure_returns_one(tmp_path):
    config = tmp_path / "sphere.json"
    config.write_text(json.dumps({"name": "cli", "base": {"kind": "sphere", "resolution": 60}}))
    assert cli_main(["neck", str(config), "--out", str(tmp_path / "out")]) == 1


@pytest.mark.slow
def test_concentric_sphere_continuity(tmp_path):
    config = sphere_config(tmp_path, resolution=400, amplitude=-0.5, n_min=1, n_max=4)
    records = ContinuityExperiment(config, workers=1).run()
    assert [r.n for r in records] == [1, 2, 3, 4]
    eps = np.array([-r.amplitude for r in records])
    exact = (1.0 - eps) ** 2 / 4.0
    assert all(r.status == "ok" for r in records)
    assert np.allclose([r.T_n for r in records], exact, rtol=1e-3)
    gaps = np.array([r.T_gap for r in records])
    assert np.all(np.diff(gaps) < 0)
    expected = np.polyfit(np.log(eps), np.log(0.25 - exact), 1)[0]
    assert empirical_rate(records) == pytest.approx(expected, rel=5e-2)
    assert (tmp_path / "records.csv").exists()


@pytest.mark.slow
def test_rescaled_manifest_lists_the_written_snapshots(dumbbell_runner):
    out = dumbbell_runner.store.out_dir
    rescaled = dumbbell_runner.result.rescaled
    payload = json.loads((out / "rescaled.json").read_text())["payload"]
    assert payload["T"] == rescaled.T and payload["T_ci"] == rescaled.T_ci
    entries = payload["snapshots"]
    assert [e["index"] for e in entries] == sorted(e["index"] for e in entries)
    late = rescaled.trusted()[-3:]
    assert {int(i) for i in late} <= {e["index"] for e in entries}
    for entry in entries:
        assert (out / entry["file"]).exists()
        assert entry["s"] == pytest.approx(rescaled.s[entry["index"]])


@pytest.mark.slow
def test_neck_report_carries_certificates_limit_set_and_meshes(dumbbell_runner):
    out = dumbbell_runner.store.out_dir
    res = dumbbell_runner.result
    payload = json.loads((out / "neck.json").read_text())["payload"]
    assert payload["t_neck"] == res.t_neck
    assert len(payload["certificates"]) == len(res.certificates)
    assert all(c["valid"] for c in payload["certificates"])
    limit = payload["limit_set"]
    assert len(limit["points"]) == len(limit["tags"]) == len(res.limit)
    assert {"left", "right"} <= set(limit["tags"])
    disk = read_obj(out / "geometry" / "neck_disk.obj")
    assert len(disk.vertices) == 65
    assert np.linalg.norm(disk.vertices - res.neck.center, axis=1).max() == pytest.approx(
        payload["disk_radius"])
    assert (out / "geometry" / "neck_window.obj").exists()


@pytest.mark.slow
def test_torus_in_dumbbell_scenario_keeps_the_link(tmp_path):
    result = run_scenario(load_config(CONFIGS / "torus_in_dumbbell.json"), tmp_path)
    assert result.link.preserved
    assert len(result.link.rows) > 1
    assert {row["linking_number"] for row in result.link.rows} in ({1}, {-1})
    with open(tmp_path / "traces" / "link.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == len(result.link.rows)
    assert all(float(row["parity"]) == 1.0 for row in rows)
    payload = json.loads((tmp_path / "report.json").read_text())["payload"]
    assert payload["link"]["preserved"]


@pytest.mark.slow
def test_dumbbell_continuity_over_the_schedule(tmp_path):
    config = load_config(CONFIGS / "dumbbell.json")
    records = ContinuityExperiment(config, tmp_path, workers=1).run()
    assert [r.n for r in records] == list(range(7))
    assert all(r.status == "ok" for r in records)
    assert all(r.bound_holds for r in records)
    for name in ("T_gap", "limit_distance"):
        values = np.array([getattr(r, name) for r in records])
        assert np.all(values[1:] <= 1.1 * values[:-1]), name
        assert values[-1] < values[0] / 10.0, name
    assert (tmp_path / "records.csv").exists()
