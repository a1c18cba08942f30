"""Metrics, run configuration, experiment orchestration and figure output."""

from .config import ConfigError, RunConfig
from .experiment import StageError, run_experiment, run_scenario
from .metrics import panel_rmse, rmse
from .render import render_outputs
