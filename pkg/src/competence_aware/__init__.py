"""Competence-aware planning with feature discovery from human feedback."""

from .campus import CampusMap, MapError, load_map, parse_map
from .cas import (
    LEVELS,
    SIGNALS,
    AutonomyModel,
    Cas,
    HumanFeedbackModel,
    Level,
    Signal,
    build_cas,
    compute_competence,
    level_optimality,
    solve_cas,
    update_autonomy_profile,
)
from .feedback import FeatureCatalog, FeedbackDataset, FeedbackRecord, split, train_profile
from .harness import ExperimentConfig, emit, run_experiment
from .refinement import find_indiscriminate, get_discriminators, refine_step, validate_discriminator
from .ssp import Solution, Ssp, solve

__all__ = [
    "AutonomyModel",
    "CampusMap",
    "Cas",
    "ExperimentConfig",
    "FeatureCatalog",
    "FeedbackDataset",
    "FeedbackRecord",
    "HumanFeedbackModel",
    "LEVELS",
    "Level",
    "MapError",
    "SIGNALS",
    "Signal",
    "Solution",
    "Ssp",
    "build_cas",
    "compute_competence",
    "emit",
    "find_indiscriminate",
    "get_discriminators",
    "level_optimality",
    "load_map",
    "parse_map",
    "refine_step",
    "run_experiment",
    "solve",
    "solve_cas",
    "split",
    "train_profile",
    "update_autonomy_profile",
    "validate_discriminator",
]
