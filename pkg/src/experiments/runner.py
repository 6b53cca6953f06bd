"""
Scenario orchestration and the continuity experiments
Runs the flow pipelines per base topology and writes every artifact of a run
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.exceptions import FlowLabError, PreconditionViolation, StageError
from app.models.schemas import BaseSurfaceSpec, ExperimentRecord, PerturbationSpec, ScenarioConfig
from app.models.surfaces import AXIS, AxiProfile, GraphFn, Surface, TriMesh
from app.services.blowup import LATE_SNAPSHOTS, BlowupClass, RescaledFlow, Window, classify, rescale, typeI_check
from app.services.flow import (
    FlowHistory,
    SingularReport,
    evolve,
    monotone_violations,
    trajectory_constant,
)
from app.services.geometry import ck_norm, curvature, graph_perturb, hausdorff_distance, set_hausdorff
from app.services.neck import (
    DIMENSION,
    BulbDecomposition,
    LimitSet,
    NeckCertificate,
    NeckWindow,
    bulb_decompose,
    detect_neck,
    limit_set,
)
from app.services.noncollapse import SpherePlacement, alpha_trace, ball_clearance, place_spheres
from app.services.shapes import cylinder_profile, dumbbell_profile, sphere_profile, torus_mesh
from app.services.topology import LinkAudit, Loop, link_audit, transversal_loop
from src.etl.artifacts import ArtifactStore

logger = logging.getLogger(__name__)

NECK_KINDS = ("dumbbell", "torus_in_dumbbell")
ALPHA_SAMPLES = 50


def build_base(spec: BaseSurfaceSpec) -> Surface:
    """Initial surface of a scenario; the torus scenario starts from the dumbbell."""
    if spec.kind == "sphere":
        return sphere_profile(spec.radius, spec.resolution)
    if spec.kind == "cylinder":
        return cylinder_profile(spec.radius, spec.resolution, spec.period)
    return dumbbell_profile(spec.resolution, spec.half_length, spec.neck_radius, spec.neck_width, spec.lobe_radius)


def perturbation(base: Surface, spec: PerturbationSpec, n: int) -> GraphFn:
    """f_n = amplitude * 2^-n * shape, the shape evaluated along the axis coordinate."""
    axial = base.points[:, 1]
    if spec.mode == "constant":
        shape = np.ones(base.size)
    elif spec.mode == "bump":
        shape = np.exp(-((axial - spec.bump_center) / spec.bump_width) ** 2)
    else:
        shape = np.cos(spec.wavenumber * axial)
    return GraphFn(base, spec.amplitude_at(n) * shape)


def singular_center(history: FlowHistory, report: SingularReport) -> np.ndarray:
    """Centre of curvature at the sample where |A| peaks on the final surface."""
    if len(report.singular_points) == 0:
        raise PreconditionViolation("the flow reported no singular point")
    final = history.final
    curv = curvature(final)
    i = int(np.argmax(curv.A))
    center = final.points[i] - curv.H[i] / curv.A[i] ** 2 * curv.normals[i]
    if isinstance(final, AxiProfile) and np.hypot(center[0], center[2]) < 1.0 / curv.A[i]:
        center[0] = center[2] = 0.0
    return center


def limit_points(history: FlowHistory, report: SingularReport) -> np.ndarray:
    """Sampled limit set; a flow shrinking to a point gives the single extrapolated point."""
    limit = limit_set(history, report)
    if len(limit) <= 1:
        return report.singular_points[:1] if len(report.singular_points) else limit.points
    return limit.points


def thread_torus(neck: NeckWindow, t_neck: float, spec: BaseSurfaceSpec) -> TriMesh:
    """Torus whose core circle passes through the neck centre in a plane containing the axis."""
    core = neck.disk_radius(t_neck)
    side = np.cross(neck.axis, [0.0, 0.0, 1.0])
    side = side / np.linalg.norm(side) if np.linalg.norm(side) > 1e-9 else np.array([1.0, 0.0, 0.0])
    return torus_mesh(core, spec.torus_tube_fraction * core, spec.torus_n_major, spec.torus_n_minor,
                      neck.center + core * side, np.cross(side, neck.axis))


def audit_link(neck: NeckWindow, certificate: NeckCertificate, config: ScenarioConfig) -> Tuple[Loop, LinkAudit]:
    """Thread a torus at the certificate time, evolve it and audit its linking with the neck circle."""
    t_neck = certificate.t
    torus = thread_torus(neck, t_neck, config.base)
    params = config.flow.model_copy(update={
        "blowup_factor": config.base.torus_blowup_factor, "blowup_threshold": None, "dump_every": 0})
    torus_history, _ = evolve(torus, params)
    loop = transversal_loop(torus, neck, t_neck)
    return loop, link_audit(torus_history, loop, neck, certificate, t_neck, config.seed)


def _min_clearance(rows: Optional[np.ndarray]) -> Optional[float]:
    return float(rows[:, 1].min()) if rows is not None and len(rows) else None


@dataclass
class ScenarioResult:
    """Everything one scenario run produced"""
    config: ScenarioConfig
    base: Optional[Surface] = None
    history: Optional[FlowHistory] = None
    report: Optional[SingularReport] = None
    rescaled: Optional[RescaledFlow] = None
    blowup: Optional[BlowupClass] = None
    typeI: Optional[Tuple[bool, float]] = None
    trajectory_K: Optional[float] = None
    certificates: List[NeckCertificate] = field(default_factory=list)
    neck: Optional[NeckWindow] = None
    decomposition: Optional[BulbDecomposition] = None
    limit: Optional[LimitSet] = None
    alpha: Optional[np.ndarray] = None
    violations: Dict[str, int] = field(default_factory=dict)
    placements: Tuple[SpherePlacement, ...] = ()
    link: Optional[LinkAudit] = None
    clearance: Dict[str, np.ndarray] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)

    @property
    def t_neck(self) -> Optional[float]:
        return self.certificates[0].t if self.certificates else None

    def summary(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"scenario": self.config.name, "kind": self.config.base.kind}
        if self.report is not None:
            payload.update({
                "T_est": self.report.T_est,
                "T_ci": self.report.T_ci,
                "typeI_constant": self.report.typeI_constant,
                "steps": self.report.steps,
                "mean_convex": self.report.mean_convex,
                "singular_points": self.report.singular_points,
            })
        if self.blowup is not None:
            payload["blowup"] = {
                "kind": self.blowup.kind,
                "radius": self.blowup.radius,
                "fit_residual": self.blowup.fit_residual,
                "axis": self.blowup.axis,
            }
        if self.typeI is not None:
            payload["typeI_stable"], payload["typeI_sup"] = self.typeI
        if self.trajectory_K is not None:
            payload["trajectory_constant"] = self.trajectory_K
        if self.certificates:
            payload["neck"] = {
                "s_neck": self.certificates[0].s,
                "t_neck": self.certificates[0].t,
                "final_u_c2": self.certificates[-1].u_c2,
                "certified_snapshots": len(self.certificates),
            }
        if self.limit is not None:
            payload["limit_set"] = {
                "points": self.limit.points,
                "tags": self.limit.bulb_tag,
                "regular": int(self.limit.regular_mask.sum()),
                "excluded": self.limit.excluded,
            }
        if self.alpha is not None and len(self.alpha):
            payload["alpha_min"] = float(self.alpha[:, 1].min())
        if self.violations:
            payload["monotone_violations"] = self.violations
        if self.placements:
            payload["placements"] = [{
                "side": p.side, "r": p.r, "t0": p.t0, "y": p.y, "center": p.center, "gap": p.gap,
                "delta": p.delta, "C": p.C, "alpha": p.alpha, "lifespan": p.lifespan,
                "min_clearance": _min_clearance(self.clearance.get(p.side)),
            } for p in self.placements]
        if self.link is not None:
            payload["link"] = {"preserved": self.link.preserved, "rows": self.link.rows}
        return payload


class ScenarioRunner:
    """Runs the stages of one scenario; each stage runs its prerequisites on demand"""

    def __init__(self, config: ScenarioConfig, out_dir: Union[str, Path, None] = None):
        self.config = config
        self.store = ArtifactStore(out_dir or config.output_dir)
        self.result = ScenarioResult(config)

    def _stage(self, name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FlowLabError as e:
            logger.error(f"Stage {name} failed: {str(e)}")
            raise StageError(name, e) from e

    @property
    def _window(self) -> Window:
        return Window(self.config.neck.half_length, self.config.neck.radius)

    def simulate(self) -> Tuple[FlowHistory, SingularReport]:
        res = self.result
        if res.history is not None:
            return res.history, res.report
        res.base = self._stage("build", lambda: build_base(self.config.base).validate())
        writer = self.store.snapshot_writer("base") if self.config.flow.dump_every else None
        res.history, res.report = self._stage("simulate", evolve, res.base, self.config.flow, writer)
        self.store.trace("curvature", ["t", "max_A", "min_H"],
                         np.column_stack([res.history.times, res.history.amax, res.history.hmin]))
        self.store.snapshot(res.history.final, "final")
        return res.history, res.report

    def rescale(self) -> BlowupClass:
        res = self.result
        if res.blowup is not None:
            return res.blowup
        history, report = self.simulate()
        tol = self.config.tolerances
        center = self._stage("rescale", singular_center, history, report)
        res.rescaled = self._stage("rescale", rescale, history, center, report.T_est, report.T_ci)
        res.blowup = self._stage("classify", classify, res.rescaled, self._window,
                                 tol.radius_tolerance, tol.classify_residual)
        res.typeI = self._stage("classify", typeI_check, history, report.T_est)
        res.trajectory_K = trajectory_constant(history, report.T_est)
        self._write_rescaled(res.rescaled)
        return res.blowup

    def _write_rescaled(self, rescaled: RescaledFlow) -> Path:
        """Rescaled snapshots on the dump cadence plus the classified late ones, with an s manifest."""
        trusted = rescaled.trusted()
        chosen = set(trusted[-LATE_SNAPSHOTS:].tolist())
        every = self.config.flow.dump_every
        if every:
            chosen.update(range(0, len(rescaled), every))
        entries = []
        for i in sorted(chosen):
            path = self.store.snapshot(rescaled.snapshots[i], f"rescaled_{i:05d}")
            entries.append({"index": i, "t": rescaled.times[i], "s": rescaled.s[i],
                            "trusted": bool(i in trusted), "file": path.relative_to(self.store.out_dir).as_posix()})
        return self.store.json("rescaled", {
            "center": rescaled.center, "T": rescaled.T, "T_ci": rescaled.T_ci, "snapshots": entries,
        }, name="rescaled")

    def neck(self) -> NeckWindow:
        res = self.result
        if res.neck is not None:
            return res.neck
        if self.config.base.kind not in NECK_KINDS:
            raise StageError("neck", PreconditionViolation(f"{self.config.base.kind} has no neckpinch"))
        blowup = self.rescale()
        history, report = res.history, res.report
        axis = None if isinstance(history.final, AxiProfile) else blowup.axis
        _, res.certificates = self._stage("neck", detect_neck, res.rescaled, self.config.neck.eps,
                                          self._window, axis)
        res.neck = NeckWindow(res.rescaled.center, AXIS if axis is None else axis, report.T_est,
                              self.config.neck.half_length, self.config.neck.radius)
        t_neck = res.t_neck
        snapshot = history.snapshots[history.index_at_or_after(t_neck)]
        res.decomposition = self._stage("bulbs", bulb_decompose, snapshot, res.neck, t_neck)
        res.limit = self._stage("limit", limit_set, history, report, res.neck, t_neck)
        self.store.trace("neck_certificates", ["s", "t", "u_c2", "valid"],
                         [(c.s, c.t, c.u_c2, float(c.valid)) for c in res.certificates])
        self._write_neck(t_neck)
        return res.neck

    def _write_neck(self, t_neck: float) -> Path:
        """Certificates, tagged limit set and the disk / window meshes at t_neck."""
        res = self.result
        self.store.geometry(res.neck.disk_mesh(t_neck), "neck_disk")
        self.store.geometry(res.neck.window_mesh(t_neck), "neck_window")
        return self.store.json("neck", {
            "center": res.neck.center,
            "axis": res.neck.axis,
            "T": res.neck.T,
            "t_neck": t_neck,
            "disk_radius": res.neck.disk_radius(t_neck),
            "certificates": [{"s": c.s, "t": c.t, "u_c2": c.u_c2, "valid": c.valid} for c in res.certificates],
            "limit_set": {
                "points": res.limit.points,
                "regular": res.limit.regular_mask,
                "tags": res.limit.bulb_tag,
                "excluded": res.limit.excluded,
            },
        }, name="neck")

    def limit(self) -> LimitSet:
        res = self.result
        if res.limit is None:
            history, report = self.simulate()
            res.limit = self._stage("limit", limit_set, history, report)
        return res.limit

    def audit_alpha(self) -> np.ndarray:
        """alpha_min and min H traces over the run, with their monotonicity audits."""
        res = self.result
        if res.alpha is not None:
            return res.alpha
        history, _ = self.simulate()
        tol = self.config.tolerances.monotone
        res.violations["min_H"] = len(monotone_violations(history.hmin_trace, tol))
        stride = max(1, len(history) // ALPHA_SAMPLES)
        res.alpha = self._stage("alpha", alpha_trace, history, stride)
        res.violations["alpha_min"] = len(monotone_violations(res.alpha, tol))
        for name, count in res.violations.items():
            if count:
                logger.warning(f"{name} trace drops more than {tol:.0%} at {count} snapshot(s)")
        self.store.trace("alpha", ["t", "alpha_min"], res.alpha)
        return res.alpha

    def place(self) -> Tuple[SpherePlacement, ...]:
        res = self.result
        if res.placements:
            return res.placements
        neck = self.neck()
        res.placements = self._stage("place", place_spheres, res.history, res.history, neck,
                                     None, self.config.tolerances.alpha_ratio)
        for p in res.placements:
            clearance = ball_clearance(p, res.history, res.report.T_est)
            res.clearance[p.side] = clearance
            self.store.trace(f"ball_{p.side}", ["t", "gap", "inside"], clearance)
        return res.placements

    def link(self) -> LinkAudit:
        """Thread a torus through the neck disk at t_neck and audit the linking number up to T."""
        res = self.result
        if res.link is not None:
            return res.link
        if self.config.base.kind != "torus_in_dumbbell":
            raise StageError("link", PreconditionViolation("the link audit needs the torus scenario"))
        neck = self.neck()
        loop, res.link = self._stage("link", audit_link, neck, res.certificates[0], self.config)
        self.store.loop("transversal", loop.polyline)
        self.store.trace("link", ["t", "linking_number", "crossings", "parity", "min_distance"],
                         [(r["t"], r["linking_number"], r["crossings"], r["parity"], r["min_distance"])
                          for r in res.link.rows])
        return res.link

    def report(self) -> Path:
        path = self.store.json("scenario", self.result.summary())
        self.result.files = list(self.store.written)
        return path

    def run(self) -> ScenarioResult:
        kind = self.config.base.kind
        logger.info(f"Running scenario {self.config.name} ({kind})")
        self.rescale()
        if kind in ("sphere", "cylinder"):
            self.limit()
            self.audit_alpha()
        elif kind == "dumbbell":
            self.neck()
            self.audit_alpha()
            self.place()
        else:
            self.link()
        self.report()
        return self.result


def run_scenario(config: ScenarioConfig, out_dir: Union[str, Path, None] = None) -> ScenarioResult:
    return ScenarioRunner(config, out_dir).run()


# ---------------------------------------------------------------------------
# continuity


@dataclass
class ContinuityContext:
    """Base-run quantities shared by every perturbed run"""
    config: ScenarioConfig
    base: Surface
    history: FlowHistory
    report: SingularReport
    limit: np.ndarray
    slide_time: float
    slide_distance: float
    neck: Optional[NeckWindow] = None

    @property
    def reference_time(self) -> float:
        return max(0.0, self.report.T_est - self.config.perturbation.reference_gap)


def limit_bound(eps: float, dimension: int = DIMENSION) -> float:
    """3 C eps^1/2 + eps with C = (2N)^1/2."""
    return 3.0 * np.sqrt(2.0 * dimension) * np.sqrt(eps) + eps


def _neck_flags(context: ContinuityContext, history: FlowHistory, report: SingularReport) -> Tuple[bool, bool, bool]:
    """Neck certificate, bulb placements and link preservation of one perturbed run."""
    config = context.config
    certified = placed = linked = False
    window = Window(config.neck.half_length, config.neck.radius)
    try:
        rescaled = rescale(history, singular_center(history, report), report.T_est, report.T_ci)
        _, certificates = detect_neck(rescaled, config.neck.eps, window)
        certified = True
    except FlowLabError as e:
        logger.warning(f"perturbed neck not certified: {str(e)}")
    if certified and config.base.kind == "torus_in_dumbbell":
        try:
            neck = NeckWindow(rescaled.center, AXIS, report.T_est, config.neck.half_length, config.neck.radius)
            _, audit = audit_link(neck, certificates[0], config)
            linked = audit.preserved
        except FlowLabError as e:
            logger.warning(f"perturbed link audit failed: {str(e)}")
    if context.neck is not None:
        try:
            place_spheres(context.history, history, context.neck, None, context.config.tolerances.alpha_ratio)
            placed = True
        except FlowLabError as e:
            logger.warning(f"perturbed placement failed: {str(e)}")
    return certified, placed, linked


def continuity_row(context: ContinuityContext, n: int) -> ExperimentRecord:
    """One perturbed run; failures mark the record instead of stopping the experiment."""
    spec = context.config.perturbation
    amplitude = spec.amplitude_at(n)
    f = perturbation(context.base, spec, n)
    record = ExperimentRecord(n=n, amplitude=amplitude, c2_norm=ck_norm(f, 2))
    try:
        start = graph_perturb(context.base, f)
        history, report = evolve(start, context.config.flow)

        slide = history.snapshot_at(context.slide_time)
        base_slide = context.history.snapshot_at(context.slide_time)
        record.contained = hausdorff_distance(base_slide, slide).distance < context.slide_distance / 2.0
        if not record.contained:
            logger.warning(f"n={n}: time-slide containment fails (slide distance {context.slide_distance:.3g})")

        T_bar = context.report.T_est
        record.T_n = report.T_est
        record.T_gap = abs(report.T_est - T_bar)
        record.limit_distance = set_hausdorff(limit_points(history, report), context.limit)

        t0 = context.reference_time
        drift = hausdorff_distance(history.snapshot_at(t0), context.history.snapshot_at(t0)).distance
        eps = max(T_bar - t0, record.T_gap, drift)
        record.cor_bound = limit_bound(eps)
        record.bound_holds = bool(record.limit_distance <= record.cor_bound)

        if context.config.base.kind in NECK_KINDS:
            record.neck_certified, record.spheres_placed, record.link_preserved = _neck_flags(context, history, report)
        logger.info(f"n={n}: T_n={record.T_n:.6g}, |T_n - T|={record.T_gap:.3g}, "
                    f"d_H(limits)={record.limit_distance:.3g}, bound {record.cor_bound:.3g}")
    except FlowLabError as e:
        logger.error(f"n={n}: perturbed run failed: {str(e)}")
        record.status = "failed"
        record.error = f"{type(e).__name__}: {e}"
    return record


def empirical_rate(records: List[ExperimentRecord]) -> Optional[float]:
    """Slope of log |T_n - T| against log ||f_n||_C2 over the successful rows."""
    rows = [(r.c2_norm, r.T_gap) for r in records if r.status == "ok" and r.T_gap and r.c2_norm > 0]
    if len(rows) < 2:
        return None
    x, y = np.log(np.array(rows)).T
    return float(np.polyfit(x, y, 1)[0])


class ContinuityExperiment:
    """Base run plus one perturbed run per level of the amplitude schedule"""

    def __init__(self, config: ScenarioConfig, out_dir: Union[str, Path, None] = None,
                 workers: Optional[int] = None):
        self.config = config
        self.runner = ScenarioRunner(config, out_dir)
        self.store = self.runner.store
        self.workers = settings.WORKERS if workers is None else workers

    def context(self) -> ContinuityContext:
        history, report = self.runner.simulate()
        res = self.runner.result
        k = min(self.config.perturbation.time_slide_steps, len(history) - 1)
        slide_time = float(history.times[k])
        distance = hausdorff_distance(history.snapshots[k], history.snapshots[0]).distance
        neck = None
        if self.config.base.kind in NECK_KINDS:
            try:
                neck = self.runner.neck()
            except StageError as e:
                logger.warning(f"base neck unavailable, placements skipped: {str(e)}")
        return ContinuityContext(self.config, res.base, history, report, limit_points(history, report),
                                 slide_time, distance, neck)

    def run(self) -> List[ExperimentRecord]:
        levels = self.config.perturbation.levels
        if not levels:
            logger.info("Empty amplitude schedule: nothing to run")
            self.store.records([])
            self.store.json("continuity", {"scenario": self.config.name, "records": [], "empirical_rate": None})
            return []

        context = self.context()
        logger.info(f"Continuity over n={levels[0]}..{levels[-1]} with T={context.report.T_est:.6g}, "
                    f"slide distance {context.slide_distance:.3g}")
        if self.workers > 1 and len(levels) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                records = list(pool.map(continuity_row, repeat(context), levels))
        else:
            records = [continuity_row(context, n) for n in levels]

        gaps = np.array([r.T_gap for r in records if r.T_gap is not None])
        if len(gaps) > 1 and len(monotone_violations(-gaps, self.config.tolerances.monotone)):
            logger.warning("|T_n - T| is not nonincreasing in n")

        self.store.records(records)
        self.store.json("continuity", {
            "scenario": self.config.name,
            "T_bar": context.report.T_est,
            "slide_time": context.slide_time,
            "slide_distance": context.slide_distance,
            "empirical_rate": empirical_rate(records),
            "records": [r.model_dump() for r in records],
        })
        return records


def run_continuity(config: ScenarioConfig, out_dir: Union[str, Path, None] = None,
                   workers: Optional[int] = None) -> List[ExperimentRecord]:
    return ContinuityExperiment(config, out_dir, workers).run()
