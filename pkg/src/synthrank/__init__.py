"""Synthetic reranker training data and retrieval evaluation."""

__version__ = "0.1.0"
