"""Condition-gated knowledge-graph reasoning."""
