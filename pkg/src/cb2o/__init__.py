"""Consensus-based bi-level optimization (CB2O) with baselines and an experiment harness."""

__version__ = "0.1.0"

from .core import (
    BiLevelProblem,
    ConfigurationError,
    DegenerateSelectionError,
    DiffusionKind,
    Ensemble,
    EvaluationError,
    InitSpec,
    RngStream,
    StepError,
    gaussian_vector,
    init_ensemble,
    min_admissible_beta,
)
from .consensus import (
    ConsensusResult,
    consensus_point,
    consensus_point_regularized,
    quantile_value,
    wasserstein_instability_demo,
)
from .dynamics import (
    Cb2oParams,
    MinibatchObjective,
    RunError,
    RunTrace,
    Scheduler,
    cb2o_step,
    minibatch_objective,
    reinit_if_stuck,
    run,
)
from .baselines import (
    adaptive_penalized_cbo_run,
    cbo_gradient_force_run,
    penalized_cbo_run,
    projected_cbo_run,
    standard_cbo_run,
)
from .metrics import PrecisionSummary, fit_decay_rate, precision, w2sq_to_dirac
from .problems import REGISTRY, get_benchmark

__all__ = [name for name in dir() if not name.startswith("_")]
