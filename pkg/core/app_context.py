"""
Application context for sharing resources between the CLI and its modules

The AppContext gives subcommands access to the run configuration, the
output directory and the run index without coupling them to ``main.py``.
"""

import logging
from pathlib import Path
from typing import Callable, Optional

from core.config import Config
from core.run_index import RunIndex

logger = logging.getLogger(__name__)

RUN_INDEX_FILENAME = 'runs.db'


class AppContext:
    """
    Context object passed to all modules providing access to shared resources.

    This enables modules to:
    - Read the validated run configuration and global flags
    - Place outputs under the run's output directory
    - Record runs and completed folds in the run index
    - Log progress messages
    """

    def __init__(
        self,
        config: Config,
        out_dir: Path,
        jobs: int = 1,
        config_path: Optional[Path] = None,
        index_path: Optional[Path] = None,
        log_message_callback: Optional[Callable[[str], None]] = None,
    ):
        """
        Initialize the application context.

        Args:
            config: Validated configuration (file + command-line overrides)
            out_dir: Directory that receives every output of this invocation
            jobs: Worker count for fold- and sample-level parallelism
            config_path: File the config came from, if any
            index_path: Run index database (default ``<out_dir>/runs.db``)
            log_message_callback: Function to log progress messages
        """
        self._config = config
        self._out_dir = Path(out_dir)
        self._jobs = max(1, int(jobs))
        self._config_path = config_path
        self._index_path = Path(index_path) if index_path else self._out_dir / RUN_INDEX_FILENAME
        self._log_message = log_message_callback or logging.getLogger('occurrank').info
        self._run_index = None

    @property
    def config(self) -> Config:
        """Get the run configuration"""
        return self._config

    @property
    def out_dir(self) -> Path:
        """Get the output directory"""
        return self._out_dir

    @property
    def jobs(self) -> int:
        return self._jobs

    @property
    def config_path(self) -> Optional[Path]:
        return self._config_path

    @property
    def index_path(self) -> Path:
        return self._index_path

    @property
    def run_index(self):
        """Run index, opened on first use."""
        if self._run_index is None:
            self._index_path.parent.mkdir(parents=True, exist_ok=True)
            self._run_index = RunIndex(self._index_path)
        return self._run_index

    def log_message(self, message: str):
        """
        Log a progress message.

        Args:
            message: The message to log
        """
        self._log_message(message)

    def ensure_out_dir(self, *parts: str) -> Path:
        """Create and return ``out_dir/parts...``."""
        path = self._out_dir.joinpath(*parts)
        path.mkdir(parents=True, exist_ok=True)
        return path
