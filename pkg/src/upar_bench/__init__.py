"""Benchmark toolkit for multi-label pedestrian attribute recognition and
attribute-based retrieval with cross-domain (CV/LOO) evaluation protocols."""

from . import data, metrics, nncore, presets, retrieval, schema, trainer

__version__ = "0.1.0"

__all__ = ["data", "metrics", "nncore", "presets", "retrieval", "schema", "trainer"]
