"""Parabolic complex Monge-Ampere flows on flat tori.

Configs are plain dicts in the scenario JSON format; see scenarios/ for examples.
"""

import json as _json

from . import _cmaflow
from ._cmaflow import ConfigError, Error, PreconditionFailed, known_checks, psh_margin, trace_inequality

__all__ = [
    "ConfigError",
    "Error",
    "PreconditionFailed",
    "config_hash",
    "known_checks",
    "normalize_config",
    "psh_margin",
    "run",
    "run_flow",
    "sample_initial",
    "series",
    "trace_inequality",
    "verify",
    "energy_monotonicity",
]


def _text(config):
    return config if isinstance(config, str) else _json.dumps(config)


def config_hash(config):
    return _cmaflow.config_hash(_text(config))


def normalize_config(config):
    return _json.loads(_cmaflow.normalize_config(_text(config)))


def sample_initial(config):
    return _cmaflow.sample_initial(_text(config))


def run_flow(config):
    """Dict with times, phi (numpy arrays shaped (N,) * 2n), residual, schedule."""
    return _cmaflow.run_flow(_text(config))


def energy_monotonicity(config):
    return _cmaflow.energy_monotonicity(_text(config))


def run(config, out):
    """Writes an archive; returns (exit status, log)."""
    return _cmaflow.cmd_run(_text(config), str(out))


def verify(archives, checks, out):
    return _cmaflow.cmd_verify([str(a) for a in archives], list(checks), str(out))


def series(archive, quantity):
    """Returns (exit status, CSV text)."""
    return _cmaflow.cmd_series(str(archive), quantity)
