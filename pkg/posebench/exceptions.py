"""
Computation errors raised by the posebench kernels.

Input validation (manifests, configuration) raises Django's ValidationError
instead; the management commands map the two families to exit codes 1 and 2.
"""


class PoseBenchError(ValueError):
    """Base class for every error raised while computing metrics or annotations."""

    default_message = "posebench computation failed"

    def __init__(self, message=None):
        super().__init__(message or self.default_message)


class EmptyPointSetError(PoseBenchError):
    default_message = "empty point set"


class DegenerateMeshError(PoseBenchError):
    default_message = "degenerate mesh"


class DegenerateBoxError(PoseBenchError):
    default_message = "degenerate box"


class InvalidTransformError(PoseBenchError):
    default_message = "invalid rigid transform"


class InvalidThresholdError(PoseBenchError):
    default_message = "invalid threshold"


class IncompleteRecordError(PoseBenchError):
    default_message = "incomplete record"


class EmptyDatasetError(PoseBenchError):
    default_message = "empty dataset"


class DegenerateCorrespondencesError(PoseBenchError):
    default_message = "degenerate correspondences"


class NoOverlapError(PoseBenchError):
    default_message = "no overlap"


class NoPointsInBoxError(PoseBenchError):
    default_message = "no points in box"


class EmptyOccupancyError(PoseBenchError):
    default_message = "empty occupancy"


class PipelineStageError(PoseBenchError):
    """Wraps an error raised inside one annotation stage, keeping the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")
