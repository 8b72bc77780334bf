"""
validator.py — Experiment config validator

Two passes over every experiment document:
- JSON Schema validation (draft 2020-12, unknown keys rejected)
- Semantic lint rules (codes listed in ERROR_CODES.md)

Issues are anchored to a JSON path and, when the source text is known, to
the line of the offending key so the CLI can print `file:line: CODE message`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import jsonschema

from ..sim.errors import MixingValidationError
from ..sim.mixing import MixingMatrix
from .experiment import EVENT_ONLY_SWEEP_KEYS, ExperimentConfig

DEFAULT_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schema" / "experiment_schema_v1.json"


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass
class ConfigIssue:
    code: str
    severity: Severity
    message: str
    path: str = "$"
    line: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "code": self.code,
            "severity": self.severity.value,
            "message": self.message,
            "path": self.path,
            "line": self.line,
        }

    def format(self, source: str) -> str:
        return f"{source}:{self.line or 1}: {self.code} {self.message}"


@dataclass
class ValidationResult:
    file_path: str
    passed: bool
    score: int
    errors: List[ConfigIssue] = field(default_factory=list)
    warnings: List[ConfigIssue] = field(default_factory=list)
    config: Optional[ExperimentConfig] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "file_path": self.file_path,
            "passed": self.passed,
            "score": self.score,
            "errors": [e.to_dict() for e in self.errors],
            "warnings": [w.to_dict() for w in self.warnings],
        }

    def format_issues(self) -> List[str]:
        return [i.format(self.file_path) for i in self.errors + self.warnings]


class ConfigError(Exception):
    """Raised when an experiment config fails validation."""

    def __init__(self, message: str, issues: Optional[List[ConfigIssue]] = None) -> None:
        super().__init__(message)
        self.issues = list(issues or [])


def _json_path(parts: Any) -> str:
    path = "$"
    for part in parts:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def locate_line(text: Optional[str], path: str) -> Optional[int]:
    """1-based line of the last key on `path` in the JSON source text.

    Keys are searched in order, each after the previous match; array
    indices are skipped. Returns None without source text.
    """
    if text is None:
        return None
    offset = 0
    found = None
    for key in re.findall(r"\.([A-Za-z_][A-Za-z0-9_$]*)", path):
        match = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, offset)
        if match is None:
            break
        offset = match.end()
        found = match.start()
    if found is None:
        return 1
    return text.count("\n", 0, found) + 1


class ExperimentConfigValidator:
    """
    Experiment config validator

    Features:
    - JSON Schema validation
    - Topology / mixing matrix checks
    - Algorithm-section consistency
    - Sweep grid checks
    - Dataset path checks
    """

    CONFIG_GLOB = "*.json"

    def __init__(self, schema_path: Path = DEFAULT_SCHEMA_PATH, strict_mode: bool = False) -> None:
        self.schema_path = schema_path
        self.strict_mode = strict_mode
        self.schema: Dict[str, Any] = self._load_json(schema_path)
        self._schema_validator = jsonschema.Draft202012Validator(self.schema)

    def _load_json(self, path: Path) -> Dict[str, Any]:
        try:
            with path.open("r", encoding="utf-8") as f:
                return json.load(f)
        except Exception as e:
            raise ConfigError(f"Failed to load JSON: {path} ({e})") from e

    # ===== Entry points =====

    def validate_file(self, path: Path) -> ValidationResult:
        """Validate a config file; never raises for content problems."""
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            issue = ConfigIssue("E200", Severity.ERROR, f"invalid JSON: {e.msg}", "$", e.lineno)
            return self._result(str(path), [issue], None)
        return self.validate_data(data, source=str(path), text=text, base_dir=path.parent)

    def validate_data(
        self,
        data: Any,
        source: str = "<config>",
        text: Optional[str] = None,
        base_dir: Optional[Path] = None,
    ) -> ValidationResult:
        issues = self._check_schema(data)
        if not issues:
            issues.extend(self._check_topology(data))
            issues.extend(self._check_algorithm_sections(data))
            issues.extend(self._check_objective(data, base_dir))
            issues.extend(self._check_sweep(data))
            issues.extend(self._check_step_size(data))

        for issue in issues:
            if issue.line is None:
                issue.line = locate_line(text, issue.path)

        config = None
        if not any(i.severity == Severity.ERROR for i in issues):
            try:
                config = ExperimentConfig.from_dict(data, base_dir)
            except Exception as e:
                issues.append(ConfigIssue("E209", Severity.ERROR, f"config rejected: {e}", "$", locate_line(text, "$")))
        return self._result(source, issues, config)

    def validate_strict(self, path: Path) -> ExperimentConfig:
        """Validate and raise ConfigError on any error (and on warnings in strict mode)."""
        result = self.validate_file(path)
        blocking = result.errors + (result.warnings if self.strict_mode else [])
        if blocking or result.config is None:
            raise ConfigError(
                f"{Path(path).name} failed validation:\n" + "\n".join(i.format(result.file_path) for i in blocking),
                blocking,
            )
        return result.config

    def validate_directory(self, root: Path) -> List[ValidationResult]:
        root = Path(root)
        if not root.exists():
            raise ConfigError(f"Directory not found: {root}")
        return [self.validate_file(p) for p in sorted(root.rglob(self.CONFIG_GLOB))]

    def _result(self, source: str, issues: List[ConfigIssue], config: Optional[ExperimentConfig]) -> ValidationResult:
        errors = [i for i in issues if i.severity == Severity.ERROR]
        warnings = [i for i in issues if i.severity == Severity.WARNING]
        return ValidationResult(
            file_path=source,
            passed=not errors,
            score=self._calculate_score(errors, warnings),
            errors=errors,
            warnings=warnings,
            config=config if not errors else None,
        )

    def _calculate_score(self, errors: List[ConfigIssue], warnings: List[ConfigIssue]) -> int:
        """Validation score (0-100)."""
        if errors:
            return max(0, 50 - len(errors) * 10)
        return max(70, 100 - len(warnings) * 5)

    # ===== Validation Checks =====

    def _check_schema(self, data: Any) -> List[ConfigIssue]:
        issues = []
        for error in sorted(self._schema_validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
            issues.append(ConfigIssue(
                code="E201",
                severity=Severity.ERROR,
                message=error.message,
                path=_json_path(error.absolute_path),
            ))
        return issues

    def _check_topology(self, data: Dict[str, Any]) -> List[ConfigIssue]:
        issues = []
        n = data["n"]
        custom = data.get("mixing", {}).get("custom_matrix")

        if custom is None:
            if n == 2:
                issues.append(ConfigIssue(
                    code="E202",
                    severity=Severity.ERROR,
                    message="ring topology needs n >= 3 (or n = 1); give mixing.custom_matrix for n = 2",
                    path="$.n",
                ))
            return issues

        if len(custom) != n * n:
            issues.append(ConfigIssue(
                code="E203",
                severity=Severity.ERROR,
                message=f"custom_matrix has {len(custom)} entries, n={n} needs {n * n}",
                path="$.mixing.custom_matrix",
            ))
            return issues
        try:
            MixingMatrix.from_list(custom, n)
        except MixingValidationError as e:
            issues.append(ConfigIssue("E203", Severity.ERROR, e.message, "$.mixing.custom_matrix"))
        return issues

    def _check_algorithm_sections(self, data: Dict[str, Any]) -> List[ConfigIssue]:
        issues = []
        regular = data["algorithm"] == "regular"

        if regular:
            for section in ("trigger", "sparsify"):
                if section in data:
                    issues.append(ConfigIssue(
                        code="E204",
                        severity=Severity.ERROR,
                        message=f"'{section}' is only valid with algorithm 'eventgrad'",
                        path=f"$.{section}",
                    ))
            if data.get("staleness", 0) > 0:
                issues.append(ConfigIssue(
                    code="W202",
                    severity=Severity.WARNING,
                    message="staleness has no effect on the regular algorithm",
                    path="$.staleness",
                ))
            return issues

        trigger = data.get("trigger", {})
        schedule = trigger.get("schedule", {})
        if trigger.get("policy") == "static" and "delta0" not in trigger and schedule.get("kind", "none") == "none":
            issues.append(ConfigIssue(
                code="W203",
                severity=Severity.WARNING,
                message="static policy with default delta0 = 0 sends every block every iteration",
                path="$.trigger.policy",
            ))
        if trigger.get("policy", "adaptive") == "adaptive" and "history_len" in trigger and trigger["history_len"] > data["iterations"]:
            issues.append(ConfigIssue(
                code="W204",
                severity=Severity.WARNING,
                message="history_len exceeds iterations; the slope window never fills",
                path="$.trigger.history_len",
            ))
        return issues

    def _check_objective(self, data: Dict[str, Any], base_dir: Optional[Path]) -> List[ConfigIssue]:
        issues = []
        objective = data["objective"]

        csv_path = objective.get("csv_path")
        if csv_path is not None:
            resolved = Path(csv_path)
            if not resolved.is_absolute() and base_dir is not None:
                resolved = base_dir / resolved
            if not resolved.exists():
                issues.append(ConfigIssue(
                    code="E207",
                    severity=Severity.ERROR,
                    message=f"dataset not found: {csv_path}",
                    path="$.objective.csv_path",
                ))

        samples = objective.get("samples_per_pe", 64)
        batch = objective.get("batch_size", 8)
        if csv_path is None and batch > samples:
            issues.append(ConfigIssue(
                code="W201",
                severity=Severity.WARNING,
                message=f"batch_size {batch} exceeds samples_per_pe {samples}; rows are drawn with replacement",
                path="$.objective.batch_size",
            ))
        if objective["kind"] == "least_squares" and "f_star" in objective:
            issues.append(ConfigIssue(
                code="W205",
                severity=Severity.WARNING,
                message="f_star is ignored for least_squares (the exact minimum is used)",
                path="$.objective.f_star",
            ))
        return issues

    def _check_sweep(self, data: Dict[str, Any]) -> List[ConfigIssue]:
        issues = []
        sweep = data.get("sweep")
        if sweep is None:
            return issues

        grid = sweep["grid"]
        if not grid:
            issues.append(ConfigIssue("E205", Severity.ERROR, "sweep grid is empty", "$.sweep.grid"))
        for key, values in grid.items():
            if not values:
                issues.append(ConfigIssue(
                    code="E205",
                    severity=Severity.ERROR,
                    message=f"sweep grid '{key}' has no values",
                    path=f"$.sweep.grid.{key}",
                ))
            if key in EVENT_ONLY_SWEEP_KEYS and data["algorithm"] == "regular":
                issues.append(ConfigIssue(
                    code="E206",
                    severity=Severity.ERROR,
                    message=f"sweep over '{key}' needs algorithm 'eventgrad'",
                    path=f"$.sweep.grid.{key}",
                ))
        if "custom_matrix" not in data.get("mixing", {}):
            bad = [v for v in grid.get("n", []) if v == 2]
            if bad:
                issues.append(ConfigIssue(
                    code="E202",
                    severity=Severity.ERROR,
                    message="sweep over n includes 2; ring topology needs n >= 3",
                    path="$.sweep.grid.n",
                ))
        elif "n" in grid:
            issues.append(ConfigIssue(
                code="E206",
                severity=Severity.ERROR,
                message="cannot sweep n with a fixed custom_matrix",
                path="$.sweep.grid.n",
            ))
        return issues

    def _check_step_size(self, data: Dict[str, Any]) -> List[ConfigIssue]:
        issues = []
        if data.get("step_size_rule") == "inverse_lipschitz" and data["gamma"] > 1.0:
            issues.append(ConfigIssue(
                code="W206",
                severity=Severity.WARNING,
                message=f"gamma = {data['gamma']}/L exceeds 1/L; SGD may diverge",
                path="$.gamma",
            ))
        return issues
