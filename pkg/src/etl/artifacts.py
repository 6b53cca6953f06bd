"""
Artifact store for simulation runs
Reads and writes OBJ meshes, profile CSVs, curvature traces and versioned JSON reports
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigurationError, EmbeddingViolation
from app.models.schemas import Envelope, ExperimentRecord, ScenarioConfig
from app.models.surfaces import AxiProfile, Surface, TriMesh

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    return value


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read a JSON scenario file into a validated ScenarioConfig"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        return ScenarioConfig.model_validate(data)
    except (OSError, json.JSONDecodeError, ValueError) as e:
        logger.error(f"Failed to load config {path}: {str(e)}")
        raise ConfigurationError(f"invalid scenario file {path}: {e}") from e


def write_obj(mesh: TriMesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for v in mesh.vertices:
            handle.write("v " + " ".join(FLOAT_FORMAT % c for c in v) + "\n")
        for f in mesh.faces:
            handle.write("f " + " ".join(str(i + 1) for i in f) + "\n")
    return path


def read_obj(path: Union[str, Path]) -> TriMesh:
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    if not vertices or not faces:
        raise EmbeddingViolation(f"{path} holds no triangle mesh")
    return TriMesh(np.array(vertices), np.array(faces))


def write_profile_csv(profile: AxiProfile, path: Union[str, Path]) -> Path:
    """Columns x (axis coordinate) and r; periodic profiles repeat the first sample one period on."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([profile.axis_samples, profile.radius])
    if profile.periodic:
        rows = np.vstack([rows, [profile.axis_samples[0] + profile.period, profile.radius[0]]])
    np.savetxt(path, rows, delimiter=",", header="x,r", comments="", fmt=FLOAT_FORMAT)
    return path


def read_profile_csv(path: Union[str, Path]) -> AxiProfile:
    rows = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    x, r = rows[:, 0], rows[:, 1]
    if r[0] > 0 and r[-1] == r[0]:
        return AxiProfile(x[:-1], r[:-1], "periodic", float(x[-1] - x[0])).validate()
    return AxiProfile(x, r, "closed-cap").validate()


def read_surface(path: Union[str, Path]) -> Surface:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return read_obj(path)
    if path.suffix.lower() == ".csv":
        return read_profile_csv(path)
    raise ConfigurationError(f"unknown surface format: {path.suffix}")


class ArtifactStore:
    """Writes every artifact of a run under one output directory"""

    def __init__(self, out_dir: Union[str, Path, None] = None):
        self.out_dir = Path(out_dir or settings.OUTPUT_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def _path(self, *parts: str) -> Path:
        path = self.out_dir.joinpath(*parts)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        return path

    def snapshot(self, surface: Surface, name: str) -> Path:
        """Dump a surface as OBJ (mesh) or CSV (profile) under snapshots/"""
        if isinstance(surface, AxiProfile):
            return write_profile_csv(surface, self._path("snapshots", f"{name}.csv"))
        return write_obj(surface, self._path("snapshots", f"{name}.obj"))

    def geometry(self, mesh: TriMesh, name: str) -> Path:
        """Inspection meshes (disks, windows) as OBJ under geometry/"""
        return write_obj(mesh, self._path("geometry", f"{name}.obj"))

    def snapshot_writer(self, prefix: str):
        """Callback for evolve's dump cadence"""
        def write(index: int, t: float, surface: Surface) -> None:
            self.snapshot(surface, f"{prefix}_{index:05d}")
        return write

    def trace(self, name: str, header: Sequence[str], rows: Union[np.ndarray, Iterable[Sequence[float]]]) -> Path:
        path = self._path("traces", f"{name}.csv")
        data = np.atleast_2d(np.asarray(list(rows) if not isinstance(rows, np.ndarray) else rows, dtype=float))
        if data.size == 0:
            data = np.empty((0, len(header)))
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=FLOAT_FORMAT)
        return path

    def loop(self, name: str, points: np.ndarray) -> Path:
        return self.trace(f"loop_{name}", ["x", "y", "z"], points)

    def json(self, kind: str, payload: Dict[str, Any], name: str = "report") -> Path:
        """Versioned JSON document; keys sorted for reproducible output"""
        path = self._path(f"{name}.json")
        envelope = Envelope(schema_version=settings.SCHEMA_VERSION, kind=kind, payload=jsonable(payload))
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(envelope.model_dump(), handle, indent=2, sort_keys=True)
        logger.info(f"Wrote {kind} report to {path}")
        return path

    def records(self, records: Sequence[ExperimentRecord], name: str = "records") -> Path:
        path = self._path(f"{name}.csv")
        fields = list(ExperimentRecord.model_fields)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=fields)
            writer.writeheader()
            for record in records:
                row = record.model_dump()
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        logger.info(f"Wrote {len(records)} records to {path}")
        return path
