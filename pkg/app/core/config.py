"""
Core configuration for the mean-curvature-flow laboratory
"""

import os
from typing import Optional
from dotenv import load_dotenv

load_dotenv()


def _float(name: str, default: float) -> float:
    return float(os.getenv(name, default))


def _int(name: str, default: int) -> int:
    return int(os.getenv(name, default))


class Settings:
    """Application settings"""

    # Server settings
    HOST: str = os.getenv("HOST", "0.0.0.0")
    PORT: int = _int("PORT", 8000)
    DEBUG: bool = os.getenv("DEBUG", "false").lower() == "true"
    LOG_LEVEL: str = os.getenv("MCF_LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("MCF_LOG_FILE")

    # Flow integration
    CFL: float = _float("MCF_CFL", 0.1)
    BLOWUP_FACTOR: float = _float("MCF_BLOWUP_FACTOR", 1000.0)
    MAX_STEPS: int = _int("MCF_MAX_STEPS", 2000)
    REDISTRIBUTION_PERIOD: int = _int("MCF_REDISTRIBUTION_PERIOD", 4)
    ADAPT_WEIGHT: float = _float("MCF_ADAPT_WEIGHT", 0.7)
    RTOL: float = _float("MCF_RTOL", 1e-8)
    RESOLUTION: int = _int("MCF_RESOLUTION", 400)
    TRACKED_POINTS: int = _int("MCF_TRACKED_POINTS", 25)

    # Neck window and certificates
    NECK_EPS: float = _float("MCF_NECK_EPS", 0.1)
    WINDOW_HALF_LENGTH: float = _float("MCF_WINDOW_HALF_LENGTH", 4.0)
    WINDOW_RADIUS: float = _float("MCF_WINDOW_RADIUS", 4.0)

    # Experiments
    SEED: int = _int("MCF_SEED", 0)
    WORKERS: int = _int("MCF_WORKERS", 1)
    OUTPUT_DIR: str = os.getenv("MCF_OUTPUT_DIR", "runs")
    CONFIG_PATH: Optional[str] = os.getenv("MCF_CONFIG")
    SCHEMA_VERSION: str = "1.0"


settings = Settings()
