"""Run configuration: YAML key-value trees plus resolved-config snapshots."""

from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ConfigError


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    with open(path) as fh:
        try:
            tree = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def write_resolved(path, tree):
    """Snapshot the fully resolved settings beside a run's outputs."""
    with open(path, "w") as fh:
        yaml.safe_dump(tree, fh, sort_keys=True, default_flow_style=False)


def section(tree, name):
    value = tree.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value
