"""Learned sparse lexical retrieval over a vocabulary-space representation."""

__version__ = "0.1.0"
