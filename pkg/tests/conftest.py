from pathlib import Path

import pytest

from src.etl.artifacts import load_config
from src.experiments.runner import ScenarioRunner

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def dumbbell_runner(tmp_path_factory):
    """Shipped dumbbell scenario, run through neck detection once per session."""
    config = load_config(CONFIGS / "dumbbell.json")
    runner = ScenarioRunner(config, tmp_path_factory.mktemp("dumbbell"))
    runner.neck()
    return runner
