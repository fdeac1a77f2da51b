"""Uncertainty-based active peak detection on discretized energy fields."""

from ubad.field import (
    EnergyMatrix,
    FieldKind,
    FieldModel,
    GridSpec,
    NoiseModel,
    eval_field,
    grid_centers,
    query,
    synthesize,
    verify_unimodal,
)
from ubad.sampling import ObservationSet, latin_init
from ubad.completion import (
    Rank1Estimate,
    SvdTriple,
    rank1_als,
    rank1_svd,
    soft_impute,
    soft_impute_path,
    subspace_gap,
)
from ubad.policy import PolicyKind, SolverConfig, TrialTrace, peak_estimate, run_trial, select_next, ubad_score

__version__ = "0.1.0"

__all__ = [
    "EnergyMatrix",
    "FieldKind",
    "FieldModel",
    "GridSpec",
    "NoiseModel",
    "ObservationSet",
    "PolicyKind",
    "Rank1Estimate",
    "SolverConfig",
    "SvdTriple",
    "TrialTrace",
    "eval_field",
    "grid_centers",
    "latin_init",
    "peak_estimate",
    "query",
    "rank1_als",
    "rank1_svd",
    "run_trial",
    "select_next",
    "soft_impute",
    "soft_impute_path",
    "subspace_gap",
    "synthesize",
    "ubad_score",
    "verify_unimodal",
]
