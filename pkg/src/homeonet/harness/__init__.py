"""Experiment configuration, runs, aggregation, CSV export and plots."""
from homeonet.harness.config import ConfigError, ExperimentConfig, load_config, parse_config
from homeonet.harness.runner import (AggregateRow, MetricsRow, aggregate, run_experiment,
                                     run_replicate, sem)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config",
           "AggregateRow", "MetricsRow", "aggregate", "run_experiment",
           "run_replicate", "sem"]
