"""Python access to the geoadapt core.

Configs are plain dicts with the same keys as the JSON config files.
"""

import json

from ._core import (
    Dataset,
    Error,
    IoError,
    NumericError,
    ProtocolError,
    ValidationError,
    alignment_residual,
    class_curvature,
    evaluate_checkpoint as _evaluate_checkpoint,
    gaussian_shift,
    load_csv,
    run_cli,
    two_moons,
)
from . import _core

__all__ = [
    "Dataset",
    "Error",
    "IoError",
    "NumericError",
    "ProtocolError",
    "ValidationError",
    "alignment_residual",
    "class_curvature",
    "config_hash",
    "evaluate_checkpoint",
    "gaussian_shift",
    "load_csv",
    "normalize_config",
    "run_cli",
    "train",
    "two_moons",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def config_hash(config):
    return _core.config_hash(_text(config))


def normalize_config(config):
    """Every field with defaults filled in."""
    return json.loads(_core.normalize_config(_text(config)))


class TrainResult:
    def __init__(self, run):
        self._run = run
        self.metrics = json.loads(run.metrics_json)
        self.losses_csv = run.losses_csv
        self.geometry_csv = run.geometry_csv
        self.orthogonality_trace = list(run.orthogonality_trace)

    def save_checkpoint(self, path):
        self._run.save_checkpoint(str(path))


def train(config, dataset):
    return TrainResult(_core.train(_text(config), dataset))


def evaluate_checkpoint(path, dataset):
    return json.loads(_evaluate_checkpoint(str(path), dataset))
