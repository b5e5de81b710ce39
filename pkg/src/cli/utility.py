"""Module for cli utility functions: tool settings and logging sinks."""
import os
import sys
from configparser import ConfigParser
from pathlib import Path

from loguru import logger

DATA_PATH = Path("data")
DEFAULT_CONFIG_PATH = DATA_PATH / "config.ini"


def get_config(config_path: str | os.PathLike) -> ConfigParser:
    """
    Loads the tool settings file, adding every missing section and option
    with its default value, and writes the completed file back.

    Args:
        config_path (str | os.PathLike): The file path
            to the configuration file.

    Returns:
        ConfigParser: The configuration object with all required
            sections and options
    """

    default_config = {
        "LOGGING": {
            "LEVEL": "INFO",
            "LOG_FILE": str(DATA_PATH / "logs/gbhammer_{time:YYYY-MM}.log"),
        },
        "SWEEP": {
            "WORKERS": "1",
        },
    }
    config = ConfigParser()

    config_path = Path(config_path)
    config.read(config_path)

    changed = False
    for section, options in default_config.items():
        if not config.has_section(section):
            config.add_section(section)
            changed = True

        for option, default_value in options.items():
            if option not in config[section]:
                config[section][option] = str(default_value)
                changed = True

    if changed:
        config_path.parent.mkdir(parents=True, exist_ok=True)
        with config_path.open("w", encoding="utf-8") as fw:
            config.write(fw)

    return config


def setup_logging(level: str, log_file: str = "") -> None:
    """
    Route loguru output to stderr at level and, when log_file is set, to a
    monthly rotated file.

    Args:
        level (str): Minimum level for stderr (DEBUG, INFO, ...).
        log_file (str): File sink path; empty disables the file sink.
    """
    logger.remove()
    logger.add(sys.stderr, level=level.upper())
    if log_file:
        # A new file each month, old ones kept for a month, zipped.
        logger.add(
            log_file,
            rotation="1 month",
            retention="1 month",
            compression="zip",
            level="DEBUG",
            serialize=False,
        )
