"""Hierarchical Graph2Vec toolkit."""

__version__ = "0.1.0"
