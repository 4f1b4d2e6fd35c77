"""Model comparison, steady states, energy and the comparison experiments."""

from .metrics import ChiSquaredReport, GridMismatch, ZeroReference, chi_squared, dendrite_energy
from .steady import (
    NoConvergence,
    TransferCurve,
    inflection_count,
    is_threshold_linear,
    steady_state,
    transfer_curve,
)
from .experiments import (
    KINDS,
    ExperimentConfig,
    ExperimentReport,
    InputBranch,
    OutputDendrite,
    PairResult,
    SomaParams,
    TableSet,
    default_experiment,
    load_tables,
    run_comparison_experiment,
    run_pair,
)

__all__ = [
    "ChiSquaredReport", "GridMismatch", "ZeroReference", "chi_squared", "dendrite_energy",
    "NoConvergence", "TransferCurve", "inflection_count", "is_threshold_linear",
    "steady_state", "transfer_curve",
    "KINDS", "ExperimentConfig", "ExperimentReport", "InputBranch", "OutputDendrite", "PairResult",
    "SomaParams", "TableSet", "default_experiment", "load_tables", "run_comparison_experiment", "run_pair",
]
