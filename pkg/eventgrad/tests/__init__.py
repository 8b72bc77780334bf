"""
eventgrad Tests Package

Unit tests for the simulator core, config validation and CLI.
"""
