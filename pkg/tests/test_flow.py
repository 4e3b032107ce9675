"""Tests for shared/flow.py: rendering, fusion and the reference estimator."""

import cv2
import numpy as np
import pytest

from core.errors import PipelineError, ValidationError
from shared.candidates import build_candidates
from shared.flow import FarnebackEstimator, ImportedFlows, build_input, estimate_flow, fuse_flows, render_flow
from shared.flow_cache import write_import
from shared.ingest import SynthSpec, generate_synthetic


def _uniform(u, v, size=4):
    field = np.zeros((size, size, 2), dtype=np.float32)
    field[..., 0] = u
    field[..., 1] = v
    return field


def _textured(size=64, seed=0):
    rng = np.random.default_rng(seed)
    image = cv2.GaussianBlur(rng.random((size, size)).astype(np.float32), (0, 0), 2.0)
    image = (image - image.min()) / (image.max() - image.min())
    return image[:, :, np.newaxis]


def _mirror_error(frame_a, frame_b, crop):
    """Interior median distance between the flow of mirrored frames and the mirrored flow."""
    flow = estimate_flow(frame_a, frame_b)
    mirrored = estimate_flow(frame_a[:, ::-1].copy(), frame_b[:, ::-1].copy())
    expected = np.stack([-flow[:, ::-1, 0], flow[:, ::-1, 1]], axis=-1)
    diff = np.linalg.norm(mirrored - expected, axis=-1)[crop:-crop, crop:-crop]
    return float(np.median(diff))


# ---------------------------------------------------------------------------
# render_flow / fuse_flows
# ---------------------------------------------------------------------------

class TestRenderFlow:
    def test_scaling(self):
        image = render_flow(_uniform(3.0, 4.0), 8.0)
        assert image.shape == (4, 4, 3)
        assert np.allclose(image[0, 0], [0.375, 0.5, 0.625])

    def test_clipping(self):
        image = render_flow(_uniform(-20.0, 0.0), 8.0)
        assert np.allclose(image[0, 0], [-1.0, 0.0, 1.0])

    def test_bad_scale(self):
        with pytest.raises(ValidationError):
            render_flow(_uniform(1.0, 1.0), 0.0)


class TestFuseFlows:
    def test_average_of_uniform_fields(self):
        fused = fuse_flows(_uniform(2.0, 0.0), _uniform(0.0, 0.0), 8.0)
        assert np.allclose(fused[0, 0], [0.125, 0.0, 0.125])

    def test_identical_fields(self):
        fused = fuse_flows(_uniform(3.0, 4.0), _uniform(3.0, 4.0), 8.0)
        assert np.allclose(fused[0, 0], [0.375, 0.5, 0.625])

    @pytest.mark.parametrize('mode', ['render', 'vector'])
    def test_symmetric(self, mode):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(8, 8, 2)).astype(np.float32)
        b = rng.normal(size=(8, 8, 2)).astype(np.float32)
        assert np.allclose(fuse_flows(a, b, 2.0, mode), fuse_flows(b, a, 2.0, mode))

    def test_default_cancels_opposite_motion(self):
        fused = fuse_flows(_uniform(2.0, 0.0), _uniform(-2.0, 0.0), 8.0)
        assert np.allclose(fused, 0.0)

    def test_render_mode_keeps_magnitude_of_opposite_motion(self):
        fused = fuse_flows(_uniform(2.0, 0.0), _uniform(-2.0, 0.0), 8.0, mode='render')
        assert np.allclose(fused[..., 0], 0.0)
        assert np.allclose(fused[..., 2], 0.25)

    def test_default_magnitude_is_norm_of_mean_vector(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(-2.0, 2.0, size=(8, 8, 2)).astype(np.float32)
        b = rng.uniform(-2.0, 2.0, size=(8, 8, 2)).astype(np.float32)
        fused = fuse_flows(a, b, 8.0)
        assert np.allclose(fused[..., 2], np.hypot(fused[..., 0], fused[..., 1]), atol=1e-6)
        assert np.allclose(fused[..., :2], (a + b) / 2.0 / 8.0, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            fuse_flows(_uniform(0, 0, 4), _uniform(0, 0, 5), 8.0)

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            fuse_flows(_uniform(0, 0), _uniform(0, 0), 8.0, mode='max')


# ---------------------------------------------------------------------------
# estimate_flow
# ---------------------------------------------------------------------------

class TestEstimateFlow:
    def test_identical_frames_give_zero_flow(self):
        frame = _textured()
        assert np.array_equal(estimate_flow(frame, frame), np.zeros((64, 64, 2), np.float32))

    def test_one_pixel_translation(self):
        frame_a = _textured()
        frame_b = np.roll(frame_a, 1, axis=1)
        flow = estimate_flow(frame_a, frame_b, FarnebackEstimator())
        inner = flow[8:-8, 8:-8]
        epe = np.sqrt((inner[..., 0] - 1.0) ** 2 + inner[..., 1] ** 2)
        assert float(np.median(epe)) < 0.2

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            estimate_flow(np.zeros((8, 8, 1)), np.zeros((8, 9, 1)))

    def test_synthetic_motion_direction(self, small_dataset):
        sample = small_dataset[0]
        flow = estimate_flow(sample.frames[sample.onset_idx], sample.frames[sample.apex_idx])
        truth = small_dataset.motion[sample.sample_id].flow_between(sample.onset_idx, sample.apex_idx)
        strong = np.linalg.norm(truth, axis=-1) > 0.5 * np.linalg.norm(truth, axis=-1).max()
        cosine = (flow[strong] * truth[strong]).sum(-1) / (
            np.linalg.norm(flow[strong], axis=-1) * np.linalg.norm(truth[strong], axis=-1) + 1e-6)
        assert float(np.median(cosine)) > 0.5

    def test_endpoint_error_on_noiseless_clips(self):
        dataset = generate_synthetic(SynthSpec(n_subjects=2, clips_per_subject=3, noise_sigma=0.0), seed=0)
        errors = []
        for sample in dataset:
            flow = estimate_flow(sample.frames[sample.onset_idx], sample.frames[sample.apex_idx])
            truth = dataset.motion[sample.sample_id].flow_between(sample.onset_idx, sample.apex_idx)
            norm = np.linalg.norm(truth, axis=-1)
            moving = norm > 0.1 * norm.max()
            errors.append(np.linalg.norm(flow[moving] - truth[moving], axis=-1))
        assert float(np.mean(np.concatenate(errors))) < 0.5

    @pytest.mark.parametrize('shift', [(1, 0), (0, 1), (1, 1)])
    def test_horizontal_mirror(self, shift):
        frame_a = _textured(seed=3)
        assert _mirror_error(frame_a, np.roll(frame_a, shift, axis=(0, 1)), crop=8) < 0.2

    def test_horizontal_mirror_on_synthetic_clips(self, small_dataset):
        for sample in small_dataset:
            onset, apex = sample.frames[sample.onset_idx], sample.frames[sample.apex_idx]
            assert _mirror_error(onset, apex, crop=4) < 0.2



# ---------------------------------------------------------------------------
# build_input / ImportedFlows
# ---------------------------------------------------------------------------

class TestBuildInput:
    def test_reference_input_shape(self, small_dataset):
        candidate = build_candidates(small_dataset[0], 4, seed=0)[0]
        image = build_input(candidate, FarnebackEstimator(), 2.0)
        assert image.shape == (32, 32, 3)
        assert image.dtype == np.float32
        assert np.all(image[..., 2] >= 0.0)

    def test_imported_flows_are_used(self, tmp_path, small_dataset):
        candidates = build_candidates(small_dataset[0], 4, seed=0)
        source = ImportedFlows(tmp_path)
        assert source.missing(candidates) == [(c.sample_id, c.j) for c in candidates]
        c = candidates[0]
        write_import(source.path_for(c.sample_id, c.j), _uniform(2.0, 0.0, 32), _uniform(0.0, 0.0, 32),
                     c.occurring_idx)
        image = build_input(c, source, 8.0)
        assert np.allclose(image[0, 0], [0.125, 0.0, 0.125])
        assert len(source.missing(candidates)) == 3

    def test_import_for_other_occurring_frame(self, tmp_path, small_dataset):
        c = build_candidates(small_dataset[0], 4, seed=0)[0]
        source = ImportedFlows(tmp_path)
        write_import(source.path_for(c.sample_id, c.j), _uniform(0, 0, 32), _uniform(0, 0, 32),
                     c.occurring_idx + 1)
        with pytest.raises(PipelineError, match='occurring frame'):
            build_input(c, source, 8.0)

    def test_missing_import(self, tmp_path, small_dataset):
        c = build_candidates(small_dataset[0], 4, seed=0)[0]
        with pytest.raises(PipelineError):
            build_input(c, ImportedFlows(tmp_path), 8.0)
