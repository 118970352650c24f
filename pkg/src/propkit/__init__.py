"""Propagation-tree toolkit: masked-path sampling, validated synthetic
enhancement, propagation metrics and detection scenarios."""

__version__ = "0.1.0"
