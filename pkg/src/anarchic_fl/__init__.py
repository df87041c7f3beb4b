"""Deterministic round-indexed simulator for AFA-CD and AFA-CS federated training."""

from .data import Dataset, Partition, PartitionPlan, gen_synthetic_logreg, load_idx, partition_by_label
from .estimator import AnarchicFederatedClassifier
from .exceptions import (
    AFLError,
    BoundedDelayError,
    ConfigurationError,
    DataError,
    DivergenceError,
    FormatError,
    PartitionError,
    StaleOverwriteWarning,
    WarmStartError,
)
from .numerics import (
    FederatedProblem,
    LogReg,
    Quadratic,
    ShiftedSquare,
    finite_diff_check,
    full_gradient,
    logreg_problem,
    loss_eval,
    quadratic_problem,
    shifted_square_pair,
    stochastic_gradient,
)
from .server import (
    afa_cd_aggregate,
    afa_cs_aggregate,
    afa_cs_ingest,
    check_lr_conditions,
    step_stats,
)
from .sim import RunConfig, estimate_constants, run_experiment, run_round
from .worker import choose_local_steps, delta_on_trajectory, local_update

__version__ = "0.1.0"
