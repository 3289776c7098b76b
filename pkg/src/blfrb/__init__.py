"""Robust bag-of-little-bootstraps inference for linear regression."""

__version__ = "0.1.0"

from .data_io import generate_synthetic, load_csv
from .dataset import Dataset, subsample_size
from .engine import (BLFRBConfig, BLFRBRun, adaptive_schedule, draw_bags,
                     draw_weights, run)
from .estimators import BLFRBRegressor, MMRegressor
from .exceptions import (BLFRBError, ConfigurationError, ConvergenceError,
                         DataFormatError, DegenerateScaleError,
                         InsufficientReplicasError, ResultsFormatError,
                         SingularDesignError)
from .frb import correction_operator, frb_replica, one_step
from .inference import (UncertaintySummary, ci_and_test, consistency_diagnostic,
                        quantile_estimate, relative_error, sd_estimate)
from .losses import C0_BREAKDOWN, C1_EFFICIENCY, MM_EFFICIENCY, TukeyLoss
from .robust_fit import FitConfig, RobustFit, fit_ls, fit_mm, fit_s, solve_mscale
from .robustness import (breakdown_table, contaminate, empty_cell_probability, lemma1_probability,
                         s_breakdown)

__all__ = [
    "adaptive_schedule", "BLFRBConfig", "BLFRBError", "BLFRBRegressor", "BLFRBRun",
    "breakdown_table", "C0_BREAKDOWN", "C1_EFFICIENCY", "ci_and_test", "ConfigurationError",
    "consistency_diagnostic", "contaminate", "ConvergenceError", "correction_operator",
    "DataFormatError", "Dataset", "DegenerateScaleError", "draw_bags", "draw_weights",
    "empty_cell_probability", "fit_ls", "fit_mm", "fit_s", "FitConfig", "frb_replica",
    "generate_synthetic", "InsufficientReplicasError", "lemma1_probability", "load_csv",
    "MM_EFFICIENCY", "MMRegressor", "one_step", "quantile_estimate", "relative_error",
    "ResultsFormatError", "RobustFit", "run", "s_breakdown", "sd_estimate",
    "SingularDesignError", "solve_mscale", "subsample_size", "TukeyLoss", "UncertaintySummary",
]
