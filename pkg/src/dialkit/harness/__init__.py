"""Configuration, datasets, training loops, reports and the command line."""

from .config import RunConfig, dump_config, load_config, parse_config
from .report import emit_report
from .runner import disentangle, evaluate_run, load_model, run, run_ensemble, sweep
from .synth import KINDS, generate, make_synthetic

__all__ = [
    "KINDS", "RunConfig", "disentangle", "dump_config", "emit_report", "evaluate_run", "generate",
    "load_config", "load_model", "make_synthetic", "parse_config", "run", "run_ensemble", "sweep",
]
