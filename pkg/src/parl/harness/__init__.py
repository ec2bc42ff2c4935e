"""Experiment orchestration: configs, seeded runs, CSV/SVG output, CLI."""
from .config import AGENTS, ConfigError, RunConfig, load_config
from .run import build_env, evaluate, load_artifact, run_experiment, run_seed, scripted_agent
from .svg import line_chart, write_chart

__all__ = [
    "AGENTS", "ConfigError", "RunConfig", "load_config", "build_env", "evaluate",
    "load_artifact", "run_experiment", "run_seed", "scripted_agent", "line_chart", "write_chart",
]
