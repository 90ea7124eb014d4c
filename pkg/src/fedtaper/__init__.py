"""Federated mini-batch SGD with client-specific tapering step sizes.

Simulates clients running local SGD with power-law step-size schedules and a
server that averages every N steps, together with the diagnostics that make
the limiting behavior measurable: limiting step-size ratios, the weighted
population optimum, the limiting-ODE tracking error, and martingale noise
summaries. FedAvg, FedProx, and FedNova baselines share the same engine.
"""

from .config import ExperimentConfig, ValidationError, dump_config, load_config, parse_config
from .engine import (
    AlgorithmVariant,
    ExperimentResult,
    NonFiniteIterate,
    aggregate,
    local_step,
    noise_realization_stats,
    run_experiment,
    run_round,
    server_pseudo_gradient,
)
from .metrics import MetricsRecord, read_csv, write_csv
from .ode import InterpolatedPath, OdeTrajectory, integrate, interpolate, ode_rhs, tracking_error
from .schedules import (
    LimitingWeights,
    StepSizeSchedule,
    event_times,
    limiting_ratio,
    step_size,
    validate_and_rank,
)
from .tasks import (
    RegressionDataset,
    RegressionTask,
    SoftmaxParams,
    SoftmaxTask,
    closed_form_optimum,
    cross_entropy_loss,
    generate_classification_data,
    generate_regression_data,
    noise_sigma_from_snr,
    regression_minibatch_grad,
    regression_population_h,
    regression_sample_grad,
    softmax,
    softmax_minibatch_grad,
)

__version__ = "0.1.0"
