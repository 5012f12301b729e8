"""Command-line experiment harness: configs, runs, persistence and CSV reports."""
from .config import ConfigError, ExperimentConfig, apply_overrides
from .experiments import Experiment

__all__ = ["ConfigError", "ExperimentConfig", "apply_overrides", "Experiment"]
