"""Approximate leave-one-out cross-validation for regularized ERM, and lambda tuning on top of it."""

from .approx import (
    AcvReport,
    EstimatorUndefinedError,
    LooEstimate,
    ScalingTable,
    acv_vector,
    aloocv_parameter,
    aloocv_parameter_q,
    error_scaling_probe,
    loo_steps,
)
from .baselines import EstimatorComparison, align, correction_terms, influence_baseline, influence_vector
from .benchmark import BenchTable, runtime_scaling
from .core import (
    Dataset,
    DimensionError,
    GLMLoss,
    L1Norm,
    Loss,
    NonFiniteError,
    RegularizedObjective,
    Regularizer,
    Sample,
    SquaredCoordinate,
    SquaredNorm,
    empirical_hessian,
    in_sample_loss,
)
from .data import CSVFormatError, load_csv, save_csv, synth_elastic, synth_logistic, synth_ridge, train_test_split
from .models import FAMILIES, LogisticLoss, SquaredLoss, elastic_net, logistic, make_objective, ridge, ridge_diagonal
from .solver import ConvergenceError, FittedModel, LoocvResult, SolverConfig, fit, loocv_exact
from .tuning import (
    TuneConfig,
    TuneTrace,
    TuningError,
    approximate_gradient,
    exact_cv_gradient,
    lambda_gradient_full,
    per_sample_gradient,
    tune_batch,
    tune_stochastic,
)

__version__ = "0.1.0"
