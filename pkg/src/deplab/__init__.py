"""Dependency parsing lab: BiLSTM transition- and graph-based parsers,
gradient-based impact attribution, and token-exclusion ablations."""

__version__ = "0.1.0"
