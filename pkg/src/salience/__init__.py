"""Simulated incentive-salience telemetry and multi-task behaviour models."""

__version__ = "0.1.0"
