"""Experiment runner: config files, seeded runs, CSV/JSON output and the CLI."""
from .config import RunConfig, load_config, parse_config, serialize_config
from .runner import RunRecord, run

__all__ = ["RunConfig", "RunRecord", "load_config", "parse_config", "run", "serialize_config"]
