"""Experiment configuration, orchestration, persistence and verification suites."""
from .config import ConfigError, ExperimentConfig, build_config, load_config, parse_text
from .manifest import CheckResult, RunManifest
from .runner import run
from .suites import VerifyReport, verify

__all__ = ["CheckResult", "ConfigError", "ExperimentConfig", "RunManifest", "VerifyReport", "build_config",
           "load_config", "parse_text", "run", "verify"]
