"""Transformers with QKV, KV and KV+Pos attention."""

from ._core import (
    ConfigError,
    IoError,
    Model,
    NumericError,
    apply_transform,
    attention,
    config,
    config_keys,
    cost,
    number_corpus,
    synthetic_example,
    train,
)

__all__ = [
    "ConfigError",
    "IoError",
    "Model",
    "NumericError",
    "apply_transform",
    "attention",
    "config",
    "config_keys",
    "cost",
    "number_corpus",
    "synthetic_example",
    "train",
]
