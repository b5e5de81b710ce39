"""
Main entry point.
"""
import sys

from src.cli.cli_main import main

sys.exit(main())
