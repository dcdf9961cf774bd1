"""Pipelines that turn informal derivations into compiler-verified Lean 4 code."""

__version__ = "0.1.0"
