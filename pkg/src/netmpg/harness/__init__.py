"""Experiment harness: configs, runs, sweeps, certification and plots."""
from .config import ConfigError, ExperimentConfig, build_model, dump_config, load_config, parse_config
from .plots import emit_plots
from .runner import RunArtifacts, VerifyReport, run_experiment, sweep_kappa, verify

__all__ = ["ConfigError", "ExperimentConfig", "RunArtifacts", "VerifyReport", "build_model",
           "dump_config", "emit_plots", "load_config", "parse_config", "run_experiment",
           "sweep_kappa", "verify"]
