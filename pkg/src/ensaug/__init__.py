"""Ensemble retrieval augmentation for imbalanced sentence-selection QA."""

__version__ = "0.1.0"
