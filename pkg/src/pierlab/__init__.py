"""Maritime weather-routing lab: an analytic ocean basin, a routing MDP,
planner teachers, offline policy learning, and a reproducible evaluation
pipeline, all behind one CLI."""

__version__ = "0.1.0"

from .envfields import (
    DEFAULT_ROUTES,
    EnvironmentFields,
    GridSpec,
    Route,
    build_basin,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetBuildError,
    DegenerateFitError,
    DomainError,
    PierlabError,
    PlanningError,
    TrainingDivergedError,
)
from .physics import (
    CALIBRATED_COEFFS,
    GROUND_TRUTH_COEFFS,
    PhysicsCoefficients,
    VesselFuelModel,
    effective_speed,
    speed_loss,
    vessel_preset,
)
from .simulator import (
    EpisodeSetup,
    RewardWeights,
    SimConfig,
    StartNoise,
    VesselState,
    featurize,
    run_episode,
    step,
)

__all__ = [
    "__version__",
    "DEFAULT_ROUTES",
    "EnvironmentFields",
    "GridSpec",
    "Route",
    "build_basin",
    "PierlabError",
    "ConfigError",
    "DomainError",
    "DegenerateFitError",
    "PlanningError",
    "DatasetBuildError",
    "CheckpointError",
    "TrainingDivergedError",
    "PhysicsCoefficients",
    "GROUND_TRUTH_COEFFS",
    "CALIBRATED_COEFFS",
    "VesselFuelModel",
    "vessel_preset",
    "speed_loss",
    "effective_speed",
    "EpisodeSetup",
    "SimConfig",
    "RewardWeights",
    "StartNoise",
    "VesselState",
    "featurize",
    "run_episode",
    "step",
]
