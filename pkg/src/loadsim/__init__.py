"""Reduced-order wheel-loader bucket loading simulator with a parameter-sweep
engine and result analysis."""

from .config import (ActionParams, ControlConstants, MachineSpec, PileSpec, SoilSpec,
                     build_parameter_grid, enumerate_campaign, load_config, validate_config)
from .engine import LoadingRecord, run_loading_cycle

__version__ = "0.1.0"

__all__ = ["ActionParams", "ControlConstants", "LoadingRecord", "MachineSpec", "PileSpec",
           "SoilSpec", "build_parameter_grid", "enumerate_campaign", "load_config",
           "run_loading_cycle", "validate_config"]
