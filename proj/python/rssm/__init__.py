"""Relational state-space models on graphs (C++ core)."""

import json

from . import _rssm
from ._rssm import (
    ConfigError,
    FormatError,
    Model,
    NumericError,
    generate_toy,
    kalman_loglik,
    lgssm_smc_loglik,
    read_dataset,
    train,
    var_metrics,
    write_dataset,
)


def preset_config(name="small"):
    return json.loads(_rssm.preset_config(name))


def config_json(config):
    return config if isinstance(config, str) else json.dumps(config)


__all__ = [
    "ConfigError",
    "FormatError",
    "Model",
    "NumericError",
    "config_json",
    "generate_toy",
    "kalman_loglik",
    "lgssm_smc_loglik",
    "preset_config",
    "read_dataset",
    "train",
    "var_metrics",
    "write_dataset",
]
