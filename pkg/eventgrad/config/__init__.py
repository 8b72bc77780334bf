"""
Config Package

Experiment configuration tools:
    - ExperimentConfig: typed experiment document
    - ExperimentConfigValidator: schema + semantic lint
    - ValidationResult / ConfigIssue: validation results
"""

from .experiment import BoundSection, ExperimentConfig, SweepPoint
from .validator import (
    ConfigError,
    ConfigIssue,
    ExperimentConfigValidator,
    Severity,
    ValidationResult,
)

__all__ = [
    "BoundSection",
    "ExperimentConfig",
    "SweepPoint",
    "ConfigError",
    "ConfigIssue",
    "ExperimentConfigValidator",
    "Severity",
    "ValidationResult",
]
