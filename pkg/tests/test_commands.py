"""End-to-end tests through main(): exit codes, the synth -> prepare -> train pipeline and desk acceptance runs."""

import json

import pytest
import torch

from core.config import BackboneSpec
from main import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from shared.model import build_model
from shared.records import RunRecord, load_json
from tests.conftest import ROOT

DESK_CONFIG = ROOT / 'configs' / 'desk.cfg'
# Synthetic clips return to neutral at the offset, which vector fusion cancels.
DESK_FUSE = ('--fuse-mode', 'render')

TINY_CONFIG = """\
k=4
image_size=16
batch_size=8
initial_lr=1e-3
epochs=2
backbone=tiny:16
flow_scale=2.0
"""


@pytest.fixture(autouse=True)
def _no_plugins(monkeypatch):
    monkeypatch.delenv('OCCURRANK_PLUGINS', raising=False)


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / 'tiny.cfg'
    path.write_text(TINY_CONFIG, encoding='utf-8')
    return path


@pytest.fixture
def tiny_manifest(tmp_path, tiny_cfg):
    out = tmp_path / 'data'
    code = main(['synth', '--out', str(out), '--config', str(tiny_cfg), '--subjects', '2',
                 '--clips-per-subject', '2', '--frames-per-clip', '8', '--image-size', '16', '--classes', '2'])
    assert code == EXIT_OK
    return out / 'manifest.csv'


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------

class TestExitCodes:
    def test_version(self, capsys):
        assert main(['--version']) == EXIT_OK
        assert 'occurrank' in capsys.readouterr().out

    def test_unknown_command(self):
        assert main(['quote']) == EXIT_VALIDATION

    def test_missing_required_flag(self):
        assert main(['loso']) == EXIT_VALIDATION

    def test_clip_shorter_than_k(self, tmp_path):
        assert main(['synth', '--out', str(tmp_path), '--frames-per-clip', '7', '--k', '8']) == EXIT_VALIDATION
        assert not (tmp_path / 'manifest.csv').exists()

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / 'bad.cfg'
        cfg.write_text("k=8\ngamma=0.95\n", encoding='utf-8')
        assert main(['synth', '--out', str(tmp_path / 'o'), '--config', str(cfg)]) == EXIT_VALIDATION

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / 'bad.cfg'
        cfg.write_text("learning_rate=0.1\n", encoding='utf-8')
        assert main(['synth', '--out', str(tmp_path / 'o'), '--config', str(cfg)]) == EXIT_VALIDATION

    def test_jobs_must_be_positive(self, tmp_path):
        assert main(['synth', '--out', str(tmp_path), '--jobs', '0']) == EXIT_VALIDATION

    def test_report_without_index(self, tmp_path):
        assert main(['report', '--out', str(tmp_path / 'empty')]) == EXIT_VALIDATION

    def test_missing_imported_flow(self, tmp_path, tiny_cfg, tiny_manifest):
        code = main(['prepare', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(tmp_path / 'cache'), '--flow', 'import', '--import-dir', str(tmp_path / 'none')])
        assert code == EXIT_RUNTIME

    def test_import_without_directory(self, tmp_path, tiny_cfg, tiny_manifest):
        code = main(['prepare', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(tmp_path / 'cache'), '--flow', 'import'])
        assert code == EXIT_VALIDATION


# ---------------------------------------------------------------------------
# synth -> prepare -> train -> report
# ---------------------------------------------------------------------------

class TestPipeline:
    def test_synth_writes_dataset(self, tiny_manifest):
        info = load_json(tiny_manifest.parent / 'dataset.json')
        assert info['spec']['n_subjects'] == 2
        assert len(tiny_manifest.read_text(encoding='utf-8').strip().splitlines()) == 1 + 4

    def test_prepare_then_train(self, tmp_path, tiny_cfg, tiny_manifest):
        cache = tmp_path / 'cache'
        assert main(['prepare', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(cache)]) == EXIT_OK
        meta = json.loads((cache / 'cache_meta.json').read_text(encoding='utf-8'))
        assert meta['k'] == 4
        assert meta['samples'] == 4

        run = tmp_path / 'run'
        assert main(['train', '--manifest', str(tiny_manifest), '--cache', str(cache),
                     '--config', str(tiny_cfg), '--out', str(run)]) == EXIT_OK
        assert (run / 'model.pt').is_file()
        assert len((run / 'train_log.jsonl').read_text(encoding='utf-8').splitlines()) == 2
        record = RunRecord.load(run / 'run_record.json')
        assert record.command == 'train'
        assert record.config['k'] == 4
        assert 'train_accuracy' in load_json(run / 'metrics.json')

    def test_train_from_backbone_weights(self, tmp_path, tiny_cfg, tiny_manifest):
        weights = tmp_path / 'backbone.pt'
        torch.save(build_model(BackboneSpec('tiny', 16), 2, seed=3).backbone.state_dict(), str(weights))
        run = tmp_path / 'run'
        assert main(['train', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--init-weights', str(weights), '--out', str(run)]) == EXIT_OK
        record = RunRecord.load(run / 'run_record.json')
        assert record.extra['options']['init_weights'] == str(weights)

    def test_missing_backbone_weights(self, tmp_path, tiny_cfg, tiny_manifest):
        code = main(['train', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--init-weights', str(tmp_path / 'absent.pt'), '--out', str(tmp_path / 'run')])
        assert code == EXIT_RUNTIME

    def test_cache_built_for_other_k(self, tmp_path, tiny_cfg, tiny_manifest):
        cache = tmp_path / 'cache'
        assert main(['prepare', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(cache)]) == EXIT_OK
        code = main(['train', '--manifest', str(tiny_manifest), '--cache', str(cache),
                     '--config', str(tiny_cfg), '--k', '3', '--out', str(tmp_path / 'run')])
        assert code == EXIT_VALIDATION

    def test_cache_built_with_other_fuse_mode(self, tmp_path, tiny_cfg, tiny_manifest):
        cache = tmp_path / 'cache'
        assert main(['prepare', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(cache)]) == EXIT_OK
        code = main(['loso', '--manifest', str(tiny_manifest), '--cache', str(cache), '--config', str(tiny_cfg),
                     '--fuse-mode', 'render', '--out', str(tmp_path / 'run')])
        assert code == EXIT_VALIDATION

    def test_loso_then_report(self, tmp_path, tiny_cfg, tiny_manifest, capsys):
        out = tmp_path / 'loso'
        assert main(['loso', '--manifest', str(tiny_manifest), '--config', str(tiny_cfg),
                     '--out', str(out)]) == EXIT_OK
        assert load_json(out / 'metrics.json')['n_samples'] == 4
        capsys.readouterr()
        assert main(['report', '--out', str(out)]) == EXIT_OK
        assert 'loso' in capsys.readouterr().out


# ---------------------------------------------------------------------------
# Desk-scale acceptance
# ---------------------------------------------------------------------------

def _desk_manifest(tmp_path):
    out = tmp_path / 'desk'
    assert main(['synth', '--out', str(out), '--config', str(DESK_CONFIG)]) == EXIT_OK
    return out / 'manifest.csv'


def _loso(tmp_path, manifest, name, *extra, config=DESK_CONFIG):
    out = tmp_path / name
    assert main(['loso', '--manifest', str(manifest), '--config', str(config), '--out', str(out),
                 *DESK_FUSE, *extra]) == EXIT_OK
    return load_json(out / 'metrics.json'), RunRecord.load(out / 'run_record.json')


@pytest.mark.slow
class TestDeskAcceptance:
    def test_loso_recognises_synthetic_classes(self, tmp_path):
        metrics, _ = _loso(tmp_path, _desk_manifest(tmp_path), 'loso')
        assert metrics['n_samples'] == 72
        assert metrics['accuracy'] >= 80.0
        assert metrics['uf1'] >= 0.75

    def test_ranking_loss_separates_scores(self, tmp_path):
        manifest = _desk_manifest(tmp_path)
        no_rank = tmp_path / 'no_rank.cfg'
        text = DESK_CONFIG.read_text(encoding='utf-8').replace('lambda=1', 'lambda=0')
        no_rank.write_text(text, encoding='utf-8')
        _, ranked = _loso(tmp_path, manifest, 'ranked')
        _, plain = _loso(tmp_path, manifest, 'plain', config=no_rank)
        assert ranked.extra['gap_mean'] > plain.extra['gap_mean']
        assert ranked.extra['gap_ge_delta'] >= 0.5

    def test_resampled_candidates_are_stable(self, tmp_path):
        out = tmp_path / 'sweep'
        assert main(['sweep', '--manifest', str(_desk_manifest(tmp_path)), '--config', str(DESK_CONFIG),
                     '--param', 'resample', '--times', '5', '--out', str(out), *DESK_FUSE]) == EXIT_OK
        accuracies = [row['accuracy'] for row in load_json(out / 'sweep.json')]
        assert len(accuracies) == 5
        mean = sum(accuracies) / len(accuracies)
        std = (sum((a - mean) ** 2 for a in accuracies) / len(accuracies)) ** 0.5
        assert std <= 5.0

    def test_three_frames_match_or_beat_occurring_frame(self, tmp_path):
        out = tmp_path / 'structures'
        assert main(['structures', '--manifest', str(_desk_manifest(tmp_path)), '--config', str(DESK_CONFIG),
                     '--mode', '1o', '--mode', '3o', '--out', str(out), *DESK_FUSE]) == EXIT_OK
        accuracy = {row['run']: row['accuracy'] for row in load_json(out / 'structures.json')}
        assert accuracy['3o'] >= accuracy['1o']

    def test_same_seed_same_metrics(self, tmp_path):
        manifest = _desk_manifest(tmp_path)
        a, _ = _loso(tmp_path, manifest, 'a')
        b, _ = _loso(tmp_path, manifest, 'b')
        assert a == b
