#!/usr/bin/env python3
"""
batch_validator.py — Batch validation for experiment configs

Features:
- Validates every experiment config in a directory
- Generates per-file reports and summary
- Supports CI/CD integration with proper exit codes

Usage:
  python -m eventgrad.tools.batch_validator eventgrad/configs \
      --out eventgrad/_reports

Exit codes:
  0 = all passed
  1 = some configs failed
  2 = fatal error (bad arguments, missing files)
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..config import ExperimentConfigValidator
from ..config.validator import DEFAULT_SCHEMA_PATH
from .io import _save_json


def _is_config_file(p: Path) -> bool:
    """Skip report files written by this tool."""
    name = p.name
    if name.endswith(("_lint.json", "_report.json", "summary.json")):
        return False
    return name.endswith(".json") and name not in {"meta.json", "report.json", "bound.json"}


def _find_configs(root: Path, exclude_dir: Optional[Path] = None) -> List[Path]:
    configs = []
    for p in sorted(root.rglob("*.json")):
        if exclude_dir:
            try:
                p.relative_to(exclude_dir)
                continue
            except ValueError:
                pass
        if _is_config_file(p):
            configs.append(p)
    return configs


def validate_configs(
    validator: ExperimentConfigValidator,
    configs: Sequence[Path],
    strict: bool = False,
    verbose: bool = False,
    report_dir: Optional[Path] = None,
) -> Tuple[int, List[str], List[Dict[str, Any]]]:
    """Validate each config, print one status line per file.

    Issues of failing configs go to stderr (first 5 unless verbose). With
    `report_dir`, a `<stem>_lint.json` is written per config. Returns
    (passed count, failed paths, result dicts).
    """
    results: List[Dict[str, Any]] = []
    passed_count = 0
    failed_files: List[str] = []

    for config_path in configs:
        try:
            result = validator.validate_file(config_path)
        except Exception as e:
            failed_files.append(str(config_path))
            print(f"✗ FAIL [ERR] {config_path.name}: {e}", file=sys.stderr)
            results.append({
                "file_path": str(config_path),
                "passed": False,
                "score": 0,
                "errors": [{"code": "FATAL", "message": str(e)}],
                "warnings": []
            })
            continue

        result_dict = result.to_dict()
        results.append(result_dict)
        if report_dir is not None:
            _save_json(report_dir / f"{config_path.stem}_lint.json", result_dict)

        ok = result.passed and not (strict and result.warnings)
        if ok:
            passed_count += 1
        else:
            failed_files.append(str(config_path))
        status = "✓ PASS" if ok else "✗ FAIL"
        warnings_str = f" ({len(result.warnings)} warnings)" if result.warnings else ""
        print(f"{status} [{result.score}/100] {config_path.name}{warnings_str}")

        if not ok:
            issues = result.format_issues()
            shown = issues if verbose else issues[:5]
            for line in shown:
                print(f"      {line}", file=sys.stderr)
            if len(issues) > len(shown):
                print(f"      ... and {len(issues) - len(shown)} more issues", file=sys.stderr)

    return passed_count, failed_files, results


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        description="Batch validate experiment configs"
    )
    parser.add_argument(
        "configs_root",
        type=str,
        help="Root directory containing experiment configs"
    )
    parser.add_argument(
        "--schema",
        type=str,
        default=None,
        help="Path to JSON Schema (packaged schema if not provided)"
    )
    parser.add_argument(
        "--out",
        type=str,
        default="eventgrad/_reports",
        help="Output directory for reports"
    )
    parser.add_argument(
        "--strict",
        action="store_true",
        help="Treat warnings as failures"
    )
    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Show every issue of failing configs"
    )

    args = parser.parse_args(argv)

    configs_root = Path(args.configs_root).resolve()
    out_dir = Path(args.out).resolve()

    if not configs_root.exists() or not configs_root.is_dir():
        print(f"[FATAL] Configs root not found: {configs_root}", file=sys.stderr)
        return 2

    schema_path = Path(args.schema).resolve() if args.schema else DEFAULT_SCHEMA_PATH
    if not schema_path.exists():
        print(f"[FATAL] Schema not found: {schema_path}", file=sys.stderr)
        return 2

    out_dir.mkdir(parents=True, exist_ok=True)
    validator = ExperimentConfigValidator(schema_path=schema_path, strict_mode=args.strict)
    configs = _find_configs(configs_root, exclude_dir=out_dir)

    if not configs:
        print(f"[WARN] No configs found in: {configs_root}", file=sys.stderr)
        _save_json(out_dir / "summary.json", {
            "timestamp": datetime.now().isoformat(),
            "configs_root": str(configs_root),
            "total": 0,
            "passed": 0,
            "failed": 0,
            "results": []
        })
        return 0

    print(f"\n{'='*60}")
    print("Experiment Config Validation")
    print(f"{'='*60}")
    print(f"Schema: {schema_path.name}")
    print(f"Configs: {len(configs)}")
    print(f"{'='*60}\n")

    passed_count, failed_files, results = validate_configs(
        validator, configs, strict=args.strict, verbose=args.verbose, report_dir=out_dir
    )

    failed_count = len(failed_files)
    print(f"\n{'='*60}")
    print(f"Summary: {passed_count}/{len(configs)} passed")
    if failed_count > 0:
        print("Failed configs:")
        for f in failed_files:
            print(f"  - {Path(f).name}")
    print(f"{'='*60}\n")

    _save_json(out_dir / "summary.json", {
        "timestamp": datetime.now().isoformat(),
        "configs_root": str(configs_root),
        "schema": str(schema_path),
        "total": len(configs),
        "passed": passed_count,
        "failed": failed_count,
        "pass_rate": f"{(passed_count/len(configs)*100):.1f}%",
        "failed_files": failed_files,
        "results": results
    })
    print(f"Reports saved to: {out_dir}")

    return 0 if failed_count == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
