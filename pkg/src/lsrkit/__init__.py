"""Learned sparse retrieval toolkit: encoder, training objectives, mining,
inverted-index retrieval and evaluation utilities for synthetic benchmarks."""

__version__ = "0.1.0"
