"""Tests for core/run_index.py: run registration, resume lookup, folds and schema migration."""

import sqlite3
from contextlib import closing

import pytest

from core.run_index import RunIndex


@pytest.fixture
def index(tmp_path):
    return RunIndex(tmp_path / 'runs.db')


CONFIG = {'k': 8, 'delta': 0.7, 'seed': 0}


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

class TestRuns:
    def test_start_registers_running(self, index, tmp_path):
        run_id = index.start_run('loso', tmp_path / 'out', CONFIG, label='desk')
        (row,) = index.runs()
        assert row['run_id'] == run_id
        assert row['status'] == 'running'
        assert row['config'] == CONFIG
        assert row['label'] == 'desk'

    def test_resume_returns_same_run(self, index, tmp_path):
        first = index.start_run('loso', tmp_path / 'out', CONFIG)
        index.finish_run(first, {'accuracy': 80.0})
        again = index.start_run('loso', tmp_path / 'out', dict(reversed(list(CONFIG.items()))))
        assert again == first
        assert index.runs()[0]['status'] == 'running'

    def test_different_config_is_new_run(self, index, tmp_path):
        first = index.start_run('loso', tmp_path / 'out', CONFIG)
        other = index.start_run('loso', tmp_path / 'out', {**CONFIG, 'k': 4})
        assert other != first

    def test_no_resume_is_new_run(self, index, tmp_path):
        first = index.start_run('loso', tmp_path / 'out', CONFIG)
        assert index.start_run('loso', tmp_path / 'out', CONFIG, resume=False) != first
        assert len(index.runs()) == 2

    def test_finish_stores_metrics(self, index, tmp_path):
        run_id = index.start_run('train', tmp_path, CONFIG)
        index.finish_run(run_id, {'accuracy': 91.5, 'uf1': 0.9, 'uar': 0.88}, wall_clock=12.5)
        (row,) = index.runs()
        assert row['status'] == 'done'
        assert row['accuracy'] == pytest.approx(91.5)
        assert row['uf1'] == pytest.approx(0.9)
        assert row['uar'] == pytest.approx(0.88)
        assert row['wall_clock'] == pytest.approx(12.5)

    def test_filter_by_command(self, index, tmp_path):
        index.start_run('train', tmp_path, CONFIG)
        index.start_run('loso', tmp_path, CONFIG)
        assert [r['command'] for r in index.runs('loso')] == ['loso']

    def test_find_run_missing(self, index, tmp_path):
        assert index.find_run('cde', tmp_path, CONFIG) is None


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

class TestFolds:
    def test_completed_folds(self, index, tmp_path):
        run_id = index.start_run('loso', tmp_path, CONFIG)
        assert index.completed_folds(run_id) == set()
        index.mark_fold_done(run_id, 'sub01', tmp_path / 'a.json')
        index.mark_fold_done(run_id, 'sub02', tmp_path / 'b.json')
        assert index.completed_folds(run_id) == {'sub01', 'sub02'}

    def test_mark_twice_updates(self, index, tmp_path):
        run_id = index.start_run('loso', tmp_path, CONFIG)
        index.mark_fold_done(run_id, 'sub01', tmp_path / 'a.json')
        index.mark_fold_done(run_id, 'sub01', tmp_path / 'b.json')
        assert index.completed_folds(run_id) == {'sub01'}

    def test_folds_are_per_run(self, index, tmp_path):
        a = index.start_run('loso', tmp_path, CONFIG)
        b = index.start_run('loso', tmp_path, CONFIG, resume=False)
        index.mark_fold_done(a, 'sub01', tmp_path / 'a.json')
        assert index.completed_folds(b) == set()

    def test_persists_across_instances(self, tmp_path):
        run_id = RunIndex(tmp_path / 'runs.db').start_run('loso', tmp_path, CONFIG)
        RunIndex(tmp_path / 'runs.db').mark_fold_done(run_id, 'sub03', tmp_path / 'c.json')
        assert RunIndex(tmp_path / 'runs.db').completed_folds(run_id) == {'sub03'}


# ---------------------------------------------------------------------------
# Migration
# ---------------------------------------------------------------------------

class TestMigration:
    def test_unlabelled_database_gets_label_column(self, tmp_path):
        path = tmp_path / 'runs.db'
        with closing(sqlite3.connect(str(path))) as conn:
            conn.execute(
                """CREATE TABLE runs (run_id TEXT PRIMARY KEY, command TEXT NOT NULL, out_dir TEXT NOT NULL,
                   config_json TEXT NOT NULL, status TEXT NOT NULL DEFAULT 'running', accuracy REAL,
                   uf1 REAL, uar REAL, started_at REAL NOT NULL, wall_clock REAL)"""
            )
            conn.execute("INSERT INTO runs(run_id, command, out_dir, config_json, started_at) "
                         "VALUES('old', 'loso', 'out', '{}', 1.0)")
            conn.commit()

        index = RunIndex(path)
        (row,) = index.runs()
        assert row['run_id'] == 'old'
        assert row['label'] == ''
        with closing(sqlite3.connect(str(path))) as conn:
            assert conn.execute("PRAGMA user_version").fetchone()[0] == 1

    def test_reopen_is_idempotent(self, tmp_path):
        RunIndex(tmp_path / 'runs.db')
        index = RunIndex(tmp_path / 'runs.db')
        index.start_run('loso', tmp_path, CONFIG, label='x')
        assert index.runs()[0]['label'] == 'x'
