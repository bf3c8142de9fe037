"""Reproducible Monte Carlo experiments and the command-line interface."""

from .config import SweepConfig, load_config  # noqa: F401
from .runner import run_sweep, run_trial, two_stage_estimate  # noqa: F401
from .io import emit_results  # noqa: F401
