"""Velocity-guided domain-weight scheduling for multi-domain continual
pre-training, plus a desk-scale training-dynamics simulator that makes the
full pipeline testable without a model.
"""

__version__ = "0.1.0"

from .core import (
    DomainSet,
    LossVector,
    VelocityVector,
    WeightVector,
    default_weights,
    normalize,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDomainError,
    FitFailureError,
    InsufficientDataError,
    InvalidDomainSetError,
    InvalidLossError,
    InvalidWeightsError,
    OrderingError,
    ProtocolError,
    VelocituneError,
)
from .scaling import (
    CheckpointSeries,
    FitOptions,
    ScalingFit,
    fit_data_scaling,
    predict_loss,
    predict_targets,
)
from .scheduler import (
    Policy,
    SchedulerState,
    compute_velocity,
    initial_scheduler_state,
    scheduler_step,
    update_weights_dbl,
    update_weights_no_target,
    update_weights_velocitune,
)
from .sampler import SamplerState
from .sim import (
    ComparisonReport,
    DynamicsParams,
    RunResult,
    SimState,
    Trajectory,
    TrajectoryRow,
    compare_policies,
    estimate_targets,
    initial_losses,
    run_proxy_phase,
    run_training,
    sim_eval,
    sim_train_step,
    stabilization_step,
    time_averaged_weights,
    trajectory_to_csv,
)
from .config import RunConfig, load_config
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint

__all__ = [
    "__version__",
    "DomainSet",
    "WeightVector",
    "LossVector",
    "VelocityVector",
    "normalize",
    "default_weights",
    "CheckpointSeries",
    "FitOptions",
    "ScalingFit",
    "fit_data_scaling",
    "predict_loss",
    "predict_targets",
    "Policy",
    "SchedulerState",
    "compute_velocity",
    "initial_scheduler_state",
    "scheduler_step",
    "update_weights_velocitune",
    "update_weights_dbl",
    "update_weights_no_target",
    "SamplerState",
    "DynamicsParams",
    "SimState",
    "Trajectory",
    "TrajectoryRow",
    "RunResult",
    "ComparisonReport",
    "sim_eval",
    "sim_train_step",
    "run_proxy_phase",
    "run_training",
    "estimate_targets",
    "initial_losses",
    "compare_policies",
    "stabilization_step",
    "time_averaged_weights",
    "trajectory_to_csv",
    "RunConfig",
    "load_config",
    "CheckpointBundle",
    "save_checkpoint",
    "load_checkpoint",
    "VelocituneError",
    "InvalidWeightsError",
    "InvalidDomainSetError",
    "InvalidLossError",
    "DegenerateDomainError",
    "InsufficientDataError",
    "FitFailureError",
    "ProtocolError",
    "OrderingError",
    "ConfigError",
    "CheckpointError",
]
