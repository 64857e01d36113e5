"""Exception types shared across the package."""


class PierlabError(Exception):
    """Base class for package errors. CLI maps these to exit code 2."""


class ConfigError(PierlabError):
    """Invalid configuration value or malformed config file."""


class DomainError(PierlabError):
    """Field query outside the grid's geographic bounds."""


class DegenerateFitError(PierlabError):
    """Regression design matrix is rank-deficient."""


class PlanningError(PierlabError):
    """Route planner could not reach the goal within its horizon."""


class DatasetBuildError(PierlabError):
    """Offline dataset collection produced no usable transitions."""


class CheckpointError(PierlabError):
    """Missing or malformed policy checkpoint."""


class TrainingDivergedError(PierlabError):
    """Training aborted on a NaN loss or unbounded value estimates."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
