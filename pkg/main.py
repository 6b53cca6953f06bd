"""
Mean-Curvature-Flow Laboratory - HTTP service

A small FastAPI application that:
1. Runs a scenario (flow, blow-up classification, neck, placements, link audit)
2. Runs the continuity experiment over an amplitude schedule
3. Writes every artifact under the scenario's output directory

Architecture:
- FastAPI backend with automatic API documentation
- Scenario configs posted as JSON (ScenarioConfig)
- Long runs execute in FastAPI's worker threadpool
"""

# === IMPORTS ===
from datetime import datetime
from typing import Any, Dict

from fastapi import FastAPI
import uvicorn

from app.core.config import settings
from app.core.exceptions import FlowLabError
from app.models.schemas import ScenarioConfig
from app.utils.logger import setup_logger
from src.etl.artifacts import jsonable
from src.experiments.runner import run_continuity, run_scenario

logger = setup_logger("app")

# Initialize FastAPI application
app = FastAPI(
    title="Mean-Curvature-Flow Laboratory",
    description="Singular-time, neckpinch and continuity experiments for mean curvature flow",
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc"
)


# === ENDPOINTS ===

@app.get("/health")
async def health():
    """
    Health check endpoint for monitoring.

    Returns:
        dict: System status and schema version
    """
    return {
        "status": "healthy",
        "schema_version": settings.SCHEMA_VERSION,
        "timestamp": datetime.now().isoformat()
    }


@app.post("/simulate")
def simulate(config: ScenarioConfig) -> Dict[str, Any]:
    """
    Run one scenario end to end.

    Returns:
        dict: Success flag, the scenario summary and the written files
    """
    try:
        result = run_scenario(config)
        return {
            "success": True,
            "report": jsonable(result.summary()),
            "files": [str(p) for p in result.files],
            "timestamp": datetime.now().isoformat()
        }
    except FlowLabError as e:
        logger.error(f"Scenario {config.name} failed: {str(e)}")
        return {"success": False, "error": f"Simulation failed: {str(e)}"}


@app.post("/continuity")
def continuity(config: ScenarioConfig) -> Dict[str, Any]:
    """
    Run the base flow and one perturbed flow per schedule level.

    Returns:
        dict: Success flag and one record per n
    """
    try:
        records = run_continuity(config)
        return {
            "success": True,
            "records": [r.model_dump() for r in records],
            "timestamp": datetime.now().isoformat()
        }
    except FlowLabError as e:
        logger.error(f"Continuity for {config.name} failed: {str(e)}")
        return {"success": False, "error": f"Continuity failed: {str(e)}"}


# === APPLICATION STARTUP ===
if __name__ == "__main__":
    uvicorn.run(
        app,
        host=settings.HOST,
        port=settings.PORT,
        log_level="debug" if settings.DEBUG else "info"
    )
