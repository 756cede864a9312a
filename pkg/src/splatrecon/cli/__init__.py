"""Command-line interface and pipeline orchestration."""

from .config import ConfigError, PipelineConfig, load_config, parse_config
from .pipeline import STAGE_CODES, StageError, run_pipeline

__all__ = ["ConfigError", "PipelineConfig", "STAGE_CODES", "StageError", "load_config", "parse_config", "run_pipeline"]
