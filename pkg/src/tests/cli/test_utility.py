"""Unittests for src/cli/utility.py."""
from configparser import ConfigParser
from pathlib import Path

from src.cli.utility import get_config, setup_logging


def test_get_config_creating_new_config(
    tmp_path: Path,
):
    """
    Test the `get_config` function for creating a new configuration file.
    """
    config_path = tmp_path / "settings" / "config.ini"

    config = get_config(config_path)

    assert config_path.is_file()
    assert config["LOGGING"]["LEVEL"] == "INFO"
    assert "LOG_FILE" in config["LOGGING"].keys()
    assert config.getint("SWEEP", "WORKERS") == 1


def test_get_config_amending_new_config(
    tmp_path: Path,
):
    """
    Test the `get_config` function for amending an existing
    configuration file.
    """
    tmp_path = tmp_path / "config.ini"
    config = ConfigParser()
    config.add_section("LOGGING")
    config["LOGGING"]["LEVEL"] = "DEBUG"
    config["LOGGING"]["LOG_FILE"] = ""

    with tmp_path.open("w", encoding="utf-8") as fw:
        config.write(fw)

    config = get_config(tmp_path)

    assert config["LOGGING"]["LEVEL"] == "DEBUG"
    assert config["LOGGING"]["LOG_FILE"] == ""
    assert config["SWEEP"]["WORKERS"] == "1"

    reread = ConfigParser()
    reread.read(tmp_path)
    assert reread.has_section("SWEEP")


def test_get_config_untouched_when_complete(tmp_path: Path):
    """
    A complete file is not rewritten.
    """
    config_path = tmp_path / "config.ini"
    get_config(config_path)
    text = config_path.read_text(encoding="utf-8")
    config_path.write_text(text + "; kept\n", encoding="utf-8")

    get_config(config_path)

    assert config_path.read_text(encoding="utf-8").endswith("; kept\n")


def test_setup_logging_file_sink(tmp_path: Path, mocker):
    """
    The file sink is added with monthly rotation only when a path is set.
    """
    add = mocker.patch("src.cli.utility.logger.add")
    mocker.patch("src.cli.utility.logger.remove")

    setup_logging("info")
    assert add.call_count == 1
    assert add.call_args.kwargs["level"] == "INFO"

    setup_logging("debug", str(tmp_path / "run.log"))
    assert add.call_count == 3
    kwargs = add.call_args.kwargs
    assert kwargs["rotation"] == "1 month"
    assert kwargs["compression"] == "zip"
