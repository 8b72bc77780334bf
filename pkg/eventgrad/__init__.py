"""
eventgrad — Event-Triggered Decentralized SGD Simulator

Deterministic desk-scale simulator for decentralized data-parallel SGD on a
ring of processing elements (PEs): regular neighbor averaging (D-PSGD) and
event-triggered communication with slope-adaptive thresholds.

Subpackages:
    - sim: mixing, objectives, trigger, comm, engine, analysis
    - config: experiment config parsing and validation
    - schema: JSON Schema for experiment configs
    - configs: bundled example experiments
    - tools: CLI utilities
    - tests: Unit tests
"""

__version__ = "1.0.0"
__author__ = "eventgrad"
