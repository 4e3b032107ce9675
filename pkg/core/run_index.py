"""
SQLite-backed index of runs and completed folds.

Stored next to run outputs. WAL mode allows the report command to read
while a long LOSO run is still writing. Completed folds are recorded as
they finish, which is what lets an interrupted run resume.
"""

import json
import logging
import sqlite3
import time
import uuid
from contextlib import closing
from pathlib import Path
from typing import Any, Dict, List, Optional, Set

logger = logging.getLogger(__name__)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS runs (
    run_id      TEXT    PRIMARY KEY,
    command     TEXT    NOT NULL,
    out_dir     TEXT    NOT NULL,
    config_json TEXT    NOT NULL,
    status      TEXT    NOT NULL DEFAULT 'running',
    accuracy    REAL,
    uf1         REAL,
    uar         REAL,
    started_at  REAL    NOT NULL,
    wall_clock  REAL
);

CREATE TABLE IF NOT EXISTS folds (
    run_id      TEXT    NOT NULL,
    fold_id     TEXT    NOT NULL,
    record_path TEXT    NOT NULL,
    finished_at REAL    NOT NULL,
    PRIMARY KEY (run_id, fold_id)
);

CREATE INDEX IF NOT EXISTS idx_runs_out_dir ON runs(out_dir);
CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command);
"""

_MIGRATION_V1 = """
BEGIN;
ALTER TABLE runs ADD COLUMN label TEXT NOT NULL DEFAULT '';
PRAGMA user_version = 1;
COMMIT;
"""


class RunIndex:
    """Persistent index of runs, their headline metrics and finished folds."""

    def __init__(self, db_path: Path):
        self._db_path = db_path
        self._init_db()

    # ------------------------------------------------------------------
    # Internal helpers
    # ------------------------------------------------------------------

    def _connect(self, timeout: float = 10.0) -> sqlite3.Connection:
        conn = sqlite3.connect(str(self._db_path), timeout=timeout)
        conn.row_factory = sqlite3.Row
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA synchronous=NORMAL")
        return conn

    def _init_db(self) -> None:
        try:
            with closing(self._connect()) as conn:
                with conn:
                    conn.executescript(_SCHEMA)
                    self._migrate(conn)
        except sqlite3.Error as exc:
            logger.error("run_index: failed to initialise DB: %s", exc)
            raise

    def _migrate(self, conn: sqlite3.Connection) -> None:
        version = conn.execute("PRAGMA user_version").fetchone()[0]
        if version >= 1:
            return
        columns = {row['name'] for row in conn.execute("PRAGMA table_info(runs)")}
        if 'label' in columns:
            conn.execute("PRAGMA user_version = 1")
            return
        logger.info("run_index: migrating schema to v1 (run labels)")
        conn.executescript(_MIGRATION_V1)

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------

    def find_run(self, command: str, out_dir: Path, config: Dict[str, Any]) -> Optional[str]:
        """Latest run with this command, output directory and config snapshot."""
        with closing(self._connect()) as conn:
            row = conn.execute(
                """SELECT run_id FROM runs WHERE command=? AND out_dir=? AND config_json=?
                   ORDER BY started_at DESC LIMIT 1""",
                (command, str(out_dir), json.dumps(config, sort_keys=True)),
            ).fetchone()
        return row['run_id'] if row else None

    def start_run(self, command: str, out_dir: Path, config: Dict[str, Any], label: str = '',
                  resume: bool = True) -> str:
        """
        Register a run, or return the matching unfinished/finished run when resuming.

        Returns:
            run_id
        """
        if resume:
            existing = self.find_run(command, out_dir, config)
            if existing:
                logger.debug("run_index: resuming run %s", existing)
                with closing(self._connect()) as conn:
                    with conn:
                        conn.execute("UPDATE runs SET status='running' WHERE run_id=?", (existing,))
                return existing
        run_id = uuid.uuid4().hex[:12]
        with closing(self._connect()) as conn:
            with conn:
                conn.execute(
                    """INSERT INTO runs(run_id, command, out_dir, config_json, label, started_at)
                       VALUES(?,?,?,?,?,?)""",
                    (run_id, command, str(out_dir), json.dumps(config, sort_keys=True), label, time.time()),
                )
        return run_id

    def finish_run(self, run_id: str, metrics: Optional[Dict[str, Any]] = None,
                   wall_clock: Optional[float] = None, status: str = 'done') -> None:
        metrics = metrics or {}
        with closing(self._connect()) as conn:
            with conn:
                conn.execute(
                    """UPDATE runs SET status=?, accuracy=?, uf1=?, uar=?, wall_clock=?
                       WHERE run_id=?""",
                    (status, metrics.get('accuracy'), metrics.get('uf1'), metrics.get('uar'),
                     wall_clock, run_id),
                )

    def runs(self, command: Optional[str] = None) -> List[Dict[str, Any]]:
        """All runs, oldest first, optionally filtered by command."""
        sql = "SELECT * FROM runs"
        params: tuple = ()
        if command:
            sql += " WHERE command=?"
            params = (command,)
        sql += " ORDER BY started_at, run_id"
        with closing(self._connect()) as conn:
            rows = conn.execute(sql, params).fetchall()
        result = []
        for row in rows:
            entry = dict(row)
            entry['config'] = json.loads(entry.pop('config_json'))
            result.append(entry)
        return result

    # ------------------------------------------------------------------
    # Folds
    # ------------------------------------------------------------------

    def mark_fold_done(self, run_id: str, fold_id: str, record_path: Path) -> None:
        with closing(self._connect()) as conn:
            with conn:
                conn.execute(
                    """INSERT INTO folds(run_id, fold_id, record_path, finished_at)
                       VALUES(?,?,?,?)
                       ON CONFLICT(run_id, fold_id)
                       DO UPDATE SET record_path=excluded.record_path, finished_at=excluded.finished_at""",
                    (run_id, fold_id, str(record_path), time.time()),
                )

    def completed_folds(self, run_id: str) -> Set[str]:
        with closing(self._connect()) as conn:
            rows = conn.execute("SELECT fold_id FROM folds WHERE run_id=?", (run_id,)).fetchall()
        return {row['fold_id'] for row in rows}
