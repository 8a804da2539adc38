"""Two-stage MIMO-OFDM radar sensing: group-LASSO channel recovery followed
by grid-search least-squares localization."""

from .errors import (ConfigError, CyclicPrefixError, DomainError, IllConditionedError,
                     RadarSenseError, RankDeficientError, ShapeError)
from .scene import RadarConfig, Target, build_clusters, paper_config, paper_targets
from .harness import ExperimentSummary, TrialReport, reproduce_tables, run_monte_carlo, run_trial

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CyclicPrefixError", "DomainError", "IllConditionedError", "RadarSenseError",
    "RankDeficientError", "ShapeError", "RadarConfig", "Target", "build_clusters", "paper_config",
    "paper_targets", "ExperimentSummary", "TrialReport", "reproduce_tables", "run_monte_carlo",
    "run_trial",
]
