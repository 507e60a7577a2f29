"""Deterministic Federated Averaging simulator with client fault injection."""

__version__ = "0.1.0"
