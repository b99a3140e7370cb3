"""Experiment orchestration: configs, run manifests, CLI verbs, figure sweeps."""

from .config import config_hash, preset_config, resolve
from .manifest import RunManifest
from .run import Run

__all__ = ["Run", "RunManifest", "config_hash", "preset_config", "resolve"]
