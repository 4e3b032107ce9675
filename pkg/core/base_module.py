"""
Base module interface for OccurRank subcommands

Every subcommand lives in ``modules/<name>/module.py`` and provides one
BaseModule subclass. This enables dynamic loading and ensures consistent
behavior across commands.
"""

import argparse
from abc import ABC, abstractmethod


class BaseModule(ABC):
    """
    Abstract base class for all OccurRank subcommands.

    Each module adds one subcommand to the CLI: it declares its arguments,
    receives the shared application context, and runs with parsed args.
    """

    def __init__(self):
        """Initialize the module"""
        self._app_context = None

    @abstractmethod
    def get_name(self) -> str:
        """
        Return the subcommand name.

        Returns:
            str: The name typed on the command line (e.g. "loso")
        """
        pass

    @abstractmethod
    def get_help(self) -> str:
        """One-line description shown in ``--help``."""
        pass

    @abstractmethod
    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """
        Declare this subcommand's arguments.

        Global flags (--config, --seed, --out, --jobs, -v, -q) are already
        present on the parser.
        """
        pass

    @abstractmethod
    def run(self, args: argparse.Namespace) -> int:
        """
        Execute the subcommand.

        Returns:
            int: Exit code (0 on success)
        """
        pass

    def initialize(self, app_context):
        """
        Initialize the module with application context.

        Called once after the module is loaded and before ``run``.

        Args:
            app_context: AppContext object providing access to shared
                        resources (config, output directory, run index)
        """
        self._app_context = app_context

    def get_order(self) -> int:
        """
        Return the listing order for this subcommand.

        Lower numbers appear first in ``--help``.
        Default is 100. Use multiples of 10 to allow easy insertion.

        Suggested order:
            10: synth
            20: prepare
            30: train
            40: loso
            50: cde
            60: sweep
            70: structures
            80: report

        Returns:
            int: The display order (default 100)
        """
        return 100

    def cleanup(self):
        """
        Release resources after the command finishes.

        Override this method to close connections, flush files, etc.
        """
        pass

    @property
    def app_context(self):
        """
        Get the application context.

        Returns:
            AppContext: The application context object
        """
        return self._app_context

    def log_message(self, message: str):
        """
        Log a progress message through the application context.

        Args:
            message: The message to log
        """
        if self._app_context:
            self._app_context.log_message(message)
