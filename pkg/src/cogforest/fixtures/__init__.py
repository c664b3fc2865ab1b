"""Shipped fixture documents."""

from importlib import resources
from pathlib import Path


def fig3_forest_path() -> Path:
    """Path of the shipped single-tree, three-path fixture forest."""
    return Path(resources.files(__package__) / "fig3_forest.json")
