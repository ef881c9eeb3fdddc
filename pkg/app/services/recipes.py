"""Bundled run configs, one per figure panel, stored as JSON under app/recipes/."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from app.models import RunConfig
from app.services.errors import ConfigError
from app.services.jobs import parse_run_config

logger = logging.getLogger(__name__)

RECIPES_DIR = Path(__file__).parent.parent / "recipes"


@dataclass
class Recipe:
    name: str
    description: str
    config: RunConfig


def list_recipes(directory: Optional[Path] = None) -> list[str]:
    """Recipe names, sorted."""
    directory = directory or RECIPES_DIR
    return sorted(path.stem for path in directory.glob("*.json"))


def load_recipe(name: str, directory: Optional[Path] = None) -> Recipe:
    """
    Load and validate one recipe.

    Raises:
        ConfigError: If the recipe is unknown or its config is invalid
    """
    directory = directory or RECIPES_DIR
    path = directory / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"Unknown recipe {name!r}; available: {', '.join(list_recipes(directory))}")
    document = json.loads(path.read_text(encoding="utf-8"))
    try:
        config = parse_run_config(document["config"])
    except ConfigError as e:
        raise ConfigError(f"Recipe {name}: {e}")
    return Recipe(name=name, description=document.get("description", ""), config=config)


def figure_recipes(directory: Optional[Path] = None) -> list[Recipe]:
    """Every bundled recipe, validated."""
    return [load_recipe(name, directory) for name in list_recipes(directory)]
