"""
Tools Package

CLI utilities:
    - cli: run / compare / sweep / bound / validate
    - batch_validator: validate every experiment config in a directory
    - io: JSON, CSV and JSONL writers
"""

__all__ = [
    "cli",
    "batch_validator",
    "io",
]
