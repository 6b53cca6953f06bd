#!/usr/bin/env python3
"""
Smoke tests for the HTTP service.
Checks that the application imports and that its endpoints answer.
"""

from fastapi.testclient import TestClient

import main
from app.core.config import settings

client = TestClient(main.app)


def test_main_import():
    """The FastAPI application is created on import."""
    assert main.app.title == "Mean-Curvature-Flow Laboratory"


def test_health_endpoint():
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["schema_version"] == settings.SCHEMA_VERSION


def test_simulate_endpoint(tmp_path):
    config = {"name": "api", "base": {"kind": "sphere", "resolution": 100}, "output_dir": str(tmp_path)}
    response = client.post("/simulate", json=config)
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is True
    assert abs(body["report"]["T_est"] - 0.25) < 5e-3
    assert str(tmp_path / "report.json") in body["files"]


def test_simulate_reports_failures(tmp_path):
    config = {
        "name": "api",
        "base": {"kind": "sphere", "resolution": 60},
        "flow": {"blowup_threshold": 1.0},
        "output_dir": str(tmp_path),
    }
    body = client.post("/simulate", json=config).json()
    assert body["success"] is False
    assert "simulate" in body["error"]


def test_invalid_config_is_rejected():
    response = client.post("/simulate", json={"base": {"kind": "cube"}})
    assert response.status_code == 422


def test_continuity_with_empty_schedule(tmp_path):
    config = {"name": "api", "perturbation": {"n_min": 0, "n_max": -1}, "output_dir": str(tmp_path)}
    body = client.post("/continuity", json=config).json()
    assert body["success"] is True
    assert body["records"] == []
