"""Experiment runner: configuration, training, evaluation, mining and blending commands."""

from .config import PRESETS, load_config, resolve_config
from .main import main

__all__ = ["PRESETS", "load_config", "main", "resolve_config"]
