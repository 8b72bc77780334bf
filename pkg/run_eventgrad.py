#!/usr/bin/env python3
"""
run_eventgrad.py — Local pre-commit check

Usage:
    python run_eventgrad.py            # configs, smoke comparison, unit tests
    python run_eventgrad.py --quick    # configs and smoke comparison only
    python run_eventgrad.py --verbose  # show test names and every lint issue

Everything runs in this process; nothing is spawned. Exit code is 0 only
when every step passes.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import sys
import time
import unittest
from pathlib import Path
from typing import Callable, List, Optional, Tuple

REPO_ROOT = Path(__file__).resolve().parent
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from eventgrad.tools import batch_validator, cli

CONFIGS_DIR = REPO_ROOT / "eventgrad" / "configs"
TESTS_DIR = REPO_ROOT / "eventgrad" / "tests"
SMOKE_CONFIG = CONFIGS_DIR / "ls_eventgrad.json"

Step = Tuple[str, Callable[[], bool]]


def _quietly(fn: Callable[[], int], verbose: bool) -> int:
    if verbose:
        return fn()
    sink = io.StringIO()
    with contextlib.redirect_stdout(sink):
        code = fn()
    if code != 0:
        print(sink.getvalue())
    return code


def check_configs(reports_dir: Path, verbose: bool) -> bool:
    argv = [str(CONFIGS_DIR), "--out", str(reports_dir / "lint")]
    if verbose:
        argv.append("--verbose")
    return _quietly(lambda: batch_validator.main(argv), verbose) == 0


def smoke_compare(reports_dir: Path, verbose: bool) -> bool:
    argv = ["compare", "--config", str(SMOKE_CONFIG), "--out", str(reports_dir / "smoke")]
    if _quietly(lambda: cli.main(argv), verbose) != 0:
        return False
    return (reports_dir / "smoke" / "report.json").exists()


def unit_tests(verbose: bool) -> bool:
    suite = unittest.defaultTestLoader.discover(str(TESTS_DIR), pattern="test_*.py", top_level_dir=str(REPO_ROOT))
    result = unittest.TextTestRunner(verbosity=2 if verbose else 1, stream=sys.stderr).run(suite)
    return result.wasSuccessful()


def build_steps(reports_dir: Path, quick: bool, verbose: bool) -> List[Step]:
    steps: List[Step] = [
        ("Bundled configs lint clean", lambda: check_configs(reports_dir, verbose)),
        ("Smoke comparison (ls_eventgrad)", lambda: smoke_compare(reports_dir, verbose)),
    ]
    if not quick:
        steps.append(("Unit tests", lambda: unit_tests(verbose)))
    return steps


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Local pre-commit check for eventgrad")
    parser.add_argument("--quick", "-q", action="store_true", help="Skip the unit tests")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")
    parser.add_argument(
        "--reports",
        type=str,
        default=str(REPO_ROOT / "eventgrad" / "_reports"),
        help="Where lint reports and smoke outputs go",
    )
    args = parser.parse_args(argv)
    reports_dir = Path(args.reports).resolve()

    failed: List[str] = []
    for name, step in build_steps(reports_dir, args.quick, args.verbose):
        started = time.perf_counter()
        try:
            ok = step()
        except Exception as e:
            print(f"  {name}: {type(e).__name__}: {e}", file=sys.stderr)
            ok = False
        mark = "ok  " if ok else "FAIL"
        print(f"[{mark}] {name} ({time.perf_counter() - started:.1f}s)")
        if not ok:
            failed.append(name)

    if failed:
        print(f"\n{len(failed)} step(s) failed: {', '.join(failed)}")
        return 1
    print(f"\nAll checks passed. Reports in {reports_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
