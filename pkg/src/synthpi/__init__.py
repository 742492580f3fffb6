"""Synthetic-control predictions with simulation-based prediction intervals."""

__version__ = "0.1.0"

from .constraints import ConstraintSpec, DeltaStarSpec, LinearRegion, build_delta_star, parse_constraint, project
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    SchemaError,
    SynthPIError,
    UnboundedError,
    UnderdeterminedError,
    UsageError,
)
from .fit import FittedSC, fit, predict, treatment_effect
from .insample import InSampleResult, estimate_sigma, in_sample_uncertainty, rho_rule
from .intervals import Bounds, PredictionInterval, assemble_counterfactual, assemble_tau
from .outsample import OutSampleResult, out_of_sample_bound
from .panel import PanelDataset, PredictorVector, SCDesign, build_design, build_predictor, load_panel
from .qclp import ConicProblem, ConicSolution, solve

__all__ = [
    "Bounds",
    "ConfigError",
    "ConicProblem",
    "ConicSolution",
    "ConstraintSpec",
    "ConvergenceError",
    "DataError",
    "DeltaStarSpec",
    "FittedSC",
    "InSampleResult",
    "LinearRegion",
    "OutSampleResult",
    "PanelDataset",
    "PredictionInterval",
    "PredictorVector",
    "SCDesign",
    "SchemaError",
    "SynthPIError",
    "UnboundedError",
    "UnderdeterminedError",
    "UsageError",
    "assemble_counterfactual",
    "assemble_tau",
    "build_delta_star",
    "build_design",
    "build_predictor",
    "estimate_sigma",
    "fit",
    "in_sample_uncertainty",
    "load_panel",
    "out_of_sample_bound",
    "parse_constraint",
    "predict",
    "project",
    "rho_rule",
    "solve",
    "treatment_effect",
]
