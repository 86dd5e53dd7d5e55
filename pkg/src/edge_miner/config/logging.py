"""Logging bootstrap from the YAML configuration file."""

import logging
import logging.config
from pathlib import Path
from typing import Optional, Union

import yaml

from .settings import settings


def setup_logging(
    config_path: Optional[Union[str, Path]] = None, level: Optional[str] = None
) -> None:
    """Configure logging from YAML, falling back to basicConfig."""
    path = Path(config_path or settings.logging_config)
    level = (level or settings.log_level).upper()

    if path.is_file():
        with path.open("r", encoding="utf-8") as fh:
            config = yaml.safe_load(fh)
        for handler in config.get("handlers", {}).values():
            filename = handler.get("filename")
            if filename:
                Path(filename).parent.mkdir(parents=True, exist_ok=True)
        logging.config.dictConfig(config)
        logging.getLogger("edge_miner").setLevel(level)
    else:
        logging.basicConfig(
            level=level,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
