"""
Custom exceptions for the mean-curvature-flow laboratory
"""


class FlowLabError(Exception):
    """Base class for every error raised by the laboratory"""
    pass


class ConfigurationError(FlowLabError):
    """Raised when configuration is invalid"""
    pass


class PreconditionViolation(FlowLabError):
    """Raised when an operation is called outside its precondition"""
    pass


class DegenerateGeometry(FlowLabError):
    """Raised on degenerate triangles or zero radius at an interior sample"""
    pass


class EmbeddingViolation(FlowLabError):
    """Raised when a surface self-intersects or breaks its representation invariants"""
    pass


class StepRejected(FlowLabError):
    """Raised when a time step leaves the surface non-embedded"""
    pass


class SolverFailure(FlowLabError):
    """Raised when the time integrator fails to converge"""
    pass


class NoBlowup(FlowLabError):
    """Raised when a curvature trace shows no blow-up trend"""
    pass


class NoData(FlowLabError):
    """Raised when a classification window contains no samples"""
    pass


class NeckNotFound(FlowLabError):
    """Raised when no rescaled snapshot certifies a neck"""
    pass


class TopologyViolation(FlowLabError):
    """Raised when the bulb decomposition does not have two components"""
    pass


class NotMeanConvex(FlowLabError):
    """Raised when H <= 0 somewhere on a surface that must be mean-convex"""
    pass


class PerturbationTooCoarse(FlowLabError):
    """Raised when no tangency point exists close enough to the tracked trajectory"""
    pass


class PlacementFailed(FlowLabError):
    """Raised when a placed ball fails geometric verification"""
    pass


class Indeterminate(FlowLabError):
    """Raised when two loops touch and their linking number is undefined"""
    pass


class NotLinked(FlowLabError):
    """Raised when no loop crosses the neck disk exactly once"""
    pass


class StageError(FlowLabError):
    """Raised by the scenario pipeline, tagging the stage that failed"""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
