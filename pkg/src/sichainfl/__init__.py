"""Contribution-aware federated learning simulator with Shapley-gated aggregation."""

__version__ = "0.1.0"
