"""Tests for shared/training.py: augmentation, the training loop and the LOSO driver."""

import numpy as np
import pytest
import torch

from core.config import Config
from core.errors import ValidationError
from core.rng import make_rng
from shared.candidates import CandidateSet, SampleRef
from shared.records import TRAIN_LOG_FILENAME, read_jsonl
from shared.training import (
    FOLD_RECORD_FILENAME,
    TrainOptions,
    augment,
    evaluate,
    fold_dir_for,
    gap_statistics,
    run_loso,
    train_model,
)


def _separable_set(n_subjects=3, per_subject=4, k=3, size=16, n_classes=2, seed=0):
    """Noisy inputs whose class decides which half (top or bottom) of channel 0 is raised."""
    rng = np.random.default_rng(seed)
    refs, stacks = [], []
    for s in range(n_subjects):
        for c in range(per_subject):
            label = c % n_classes
            refs.append(SampleRef(f"sub{s}_c{c}", f"sub{s}", 'synthetic', label))
            x = rng.normal(scale=0.1, size=(k, 3, size, size)).astype(np.float32)
            rows = slice(0, size // 2) if label == 0 else slice(size // 2, size)
            x[:, 0, rows] += 1.0
            stacks.append(x)
    return CandidateSet(refs, np.stack(stacks))


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

class TestAugment:
    def test_same_transform_for_every_candidate(self):
        base = torch.rand(6, 1, 3, 16, 16)
        out = augment(base.repeat(1, 4, 1, 1, 1), make_rng(0, 'aug:t:1'))
        for j in range(1, 4):
            assert torch.equal(out[:, j], out[:, 0])

    def test_flip_negates_horizontal_flow(self):
        batch = torch.zeros(20, 2, 3, 8, 8)
        batch[:, :, 0] = 0.5
        batch[:, :, 1, :, :4] = 1.0
        out = augment(batch, make_rng(1, 'aug:t:1'), scale=(1.0, 1.0))
        flipped = out[:, 0, 0, 0, 0] < 0
        assert flipped.any() and (~flipped).any()
        assert torch.allclose(out[flipped][:, :, 0], torch.full_like(out[flipped][:, :, 0], -0.5))
        assert torch.equal(out[flipped][:, :, 1], torch.flip(batch[flipped][:, :, 1], dims=[-1]))
        assert torch.equal(out[~flipped], batch[~flipped])

    def test_frames_are_not_negated(self):
        batch = torch.full((20, 1, 3, 8, 8), 0.5)
        out = augment(batch, make_rng(1, 'aug:t:1'), flow_channels=False, scale=(1.0, 1.0))
        assert torch.equal(out, batch)

    def test_stream_repeats(self):
        batch = torch.rand(4, 2, 3, 16, 16)
        a = augment(batch, make_rng(3, 'aug:t:2'))
        b = augment(batch, make_rng(3, 'aug:t:2'))
        assert torch.equal(a, b)


# ---------------------------------------------------------------------------
# gap_statistics
# ---------------------------------------------------------------------------

class TestGapStatistics:
    def test_known_scores(self):
        alpha = np.array([[0.85, 0.05, 0.05, 0.05], [0.25, 0.25, 0.25, 0.25]])
        mean, fraction = gap_statistics(alpha, gamma=0.25, delta=0.7)
        assert mean == pytest.approx(0.4)
        assert fraction == 0.5

    def test_single_candidate(self):
        assert gap_statistics(np.ones((3, 1)), 0.1, 0.7) == (0.0, 0.0)


# ---------------------------------------------------------------------------
# train_model
# ---------------------------------------------------------------------------

class TestTrainModel:
    def test_overfits_a_small_batch(self):
        data = _separable_set(n_subjects=2, per_subject=4, k=2)
        config = Config(k=2, gamma=0.5, image_size=16, batch_size=8, initial_lr=1e-2, epochs=200,
                        backbone_spec='tiny:16')
        result = train_model(data, config, 2, TrainOptions(augment=False))
        assert result.train_accuracy >= 99.0
        assert len(result.epochs) == 200

    def test_deterministic(self, fast_config):
        data = _separable_set(k=4)
        config = fast_config.replace(image_size=16)
        a = train_model(data, config, 2)
        b = train_model(data, config, 2)
        assert [e.loss for e in a.epochs] == [e.loss for e in b.epochs]
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_learning_rate_anneals_per_step(self, fast_config, tmp_path):
        log = tmp_path / TRAIN_LOG_FILENAME
        train_model(_separable_set(k=4), fast_config.replace(image_size=16, epochs=3), 2,
                    TrainOptions(log_path=log))
        lines = read_jsonl(log)
        assert [line['epoch'] for line in lines] == [1, 2, 3]
        assert lines[0]['lr'] == pytest.approx(fast_config.initial_lr)
        assert lines[0]['lr'] > lines[1]['lr'] > lines[2]['lr'] > 0.0

    def test_single_candidate_training(self, fast_config):
        data = _separable_set(k=4).select_candidate(1)
        result = train_model(data, fast_config.replace(image_size=16), 2)
        assert result.gap_mean == 0.0
        assert all(e.ro == 0.0 for e in result.epochs)

    def test_empty_training_set(self, fast_config):
        empty = CandidateSet([], np.zeros((0, 4, 3, 16, 16), np.float32))
        with pytest.raises(ValidationError):
            train_model(empty, fast_config, 2)

    def test_evaluate_shapes(self, fast_config):
        data = _separable_set(k=4)
        result = train_model(data, fast_config.replace(image_size=16, epochs=1), 2)
        evaluation = evaluate(result.model, data, batch_size=5)
        assert evaluation.predictions.shape == (12,)
        assert evaluation.probabilities.shape == (12, 2)
        assert np.allclose(evaluation.alpha.sum(axis=1), 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# run_loso
# ---------------------------------------------------------------------------

class TestRunLoso:
    def test_one_record_per_subject(self, fast_config, tmp_path):
        data = _separable_set(k=4)
        done = []
        outcomes = run_loso(data, fast_config.replace(image_size=16, epochs=1), 2, tmp_path,
                            on_fold_done=lambda o: done.append(o.record.fold_id))
        assert [o.record.fold_id for o in outcomes] == ['sub0', 'sub1', 'sub2']
        assert sorted(done) == ['sub0', 'sub1', 'sub2']
        for outcome in outcomes:
            assert outcome.record_path == fold_dir_for(tmp_path, outcome.record.fold_id) / FOLD_RECORD_FILENAME
            assert outcome.record_path.is_file()
            assert all(s.startswith(outcome.record.fold_id + '_') for s in outcome.record.sample_ids)
            assert len(outcome.record.alpha[0]) == 4

    def test_completed_folds_are_reused(self, fast_config, tmp_path):
        data = _separable_set(k=4)
        config = fast_config.replace(image_size=16, epochs=1)
        first = run_loso(data, config, 2, tmp_path)
        done = []
        again = run_loso(data, config, 2, tmp_path, completed={'sub0', 'sub1'},
                         on_fold_done=lambda o: done.append(o.record.fold_id))
        assert done == ['sub2']
        assert [o.resumed for o in again] == [True, True, False]
        assert [o.record for o in again] == [o.record for o in first]

    @pytest.mark.slow
    def test_parallel_matches_serial(self, fast_config, tmp_path):
        data = _separable_set(k=4)
        config = fast_config.replace(image_size=16, epochs=1)
        serial = run_loso(data, config, 2, tmp_path / 'serial')
        parallel = run_loso(data, config, 2, tmp_path / 'parallel', jobs=2)
        assert [o.record.predictions for o in serial] == [o.record.predictions for o in parallel]
