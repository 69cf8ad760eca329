"""Curriculum learning with iterative data pruning for density-map regression."""

__version__ = "0.1.0"
