"""
Candidate inputs for the full three-frame pipeline and its reduced variants

Besides the full (onset, occurring, offset) flow images, the structure
comparison builds:

    1o                 the occurring frames themselves (no flow)
    2o                 rendered onset -> occurring flow only
    3o                 fused onset -> occurring and occurring -> offset flow
    apex               the annotated apex frame (one input per sample)
    onset-apex         rendered onset -> apex flow (one input)
    onset-apex-offset  fused onset -> apex and apex -> offset flow (one input)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import PipelineError, ValidationError
from core.types import MESample
from shared.candidates import CandidateSet, SampleRef, build_candidates
from shared.flow import (
    DEFAULT_FUSE_MODE, FarnebackEstimator, FlowEstimator, FlowSource, ImportedFlows, build_input, estimate_flow,
    fuse_flows, render_flow
)
from shared.flow_cache import FlowCache

logger = logging.getLogger(__name__)

STRUCTURE_MODES = ('1o', '2o', '3o', 'apex', 'onset-apex', 'onset-apex-offset')
APEX_MODES = ('apex', 'onset-apex', 'onset-apex-offset')
FLOW_MODES = ('2o', '3o', 'onset-apex', 'onset-apex-offset')


def ref_of(sample: MESample) -> SampleRef:
    return SampleRef(sample.sample_id, sample.subject_id, sample.dataset_id, sample.label)


def as_rgb(frame: np.ndarray) -> np.ndarray:
    """H x W x 1 frames are replicated to three channels."""
    return np.repeat(frame, 3, axis=2) if frame.shape[2] == 1 else np.asarray(frame)


def candidate_inputs(sample: MESample, k: int, seed: int, source: Optional[FlowSource],
                     flow_scale: float, fuse_mode: str = DEFAULT_FUSE_MODE) -> Tuple[np.ndarray, List[int]]:
    """K x H x W x 3 fused flow images of one sample plus their occurring indices."""
    candidates = build_candidates(sample, k, seed=seed)
    images = [build_input(c, source, flow_scale, fuse_mode) for c in candidates]
    return np.stack(images), [c.occurring_idx for c in candidates]


def structure_inputs(sample: MESample, mode: str, k: int, seed: int, source: Optional[FlowSource],
                     flow_scale: float, fuse_mode: str = DEFAULT_FUSE_MODE) -> np.ndarray:
    """
    Inputs of one sample for a structure mode, K' x H x W x 3.

    Raises:
        ValidationError: unknown mode, an apex mode on a sample without apex,
            or an apex flow mode with imported flows
        PipelineError: 2o with a missing imported field
    """
    if mode not in STRUCTURE_MODES:
        raise ValidationError(f"unknown structure mode '{mode}' (expected one of {', '.join(STRUCTURE_MODES)})")
    if mode == '3o':
        return candidate_inputs(sample, k, seed, source, flow_scale, fuse_mode)[0]
    imported = source if isinstance(source, ImportedFlows) else None
    estimator = source if isinstance(source, FlowEstimator) else FarnebackEstimator()
    if mode in ('1o', '2o'):
        candidates = build_candidates(sample, k, seed=seed)
        if mode == '1o':
            return np.stack([as_rgb(c.occurring_frame) for c in candidates])
        if imported is not None:
            return np.stack([render_flow(imported.candidate_flows(c)[0], flow_scale) for c in candidates])
        return np.stack([render_flow(estimate_flow(c.onset_frame, c.occurring_frame, estimator), flow_scale)
                         for c in candidates])

    if sample.apex_idx is None:
        raise ValidationError(f"structure mode '{mode}' needs apex annotations; {sample.sample_id} has none")
    onset = sample.frame(sample.onset_idx)
    apex = sample.frame(sample.apex_idx)
    offset = sample.frame(sample.offset_idx)
    if mode == 'apex':
        return as_rgb(apex)[np.newaxis]
    if imported is not None:
        raise ValidationError(f"structure mode '{mode}' needs a flow estimator; imported flows cover only "
                              f"the drawn candidates")
    flow_oa = estimate_flow(onset, apex, estimator)
    if mode == 'onset-apex':
        return render_flow(flow_oa, flow_scale)[np.newaxis]
    return fuse_flows(flow_oa, estimate_flow(apex, offset, estimator), flow_scale, fuse_mode)[np.newaxis]


def _to_channels_first(stacks: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(stacks).transpose(0, 1, 4, 2, 3)


def build_structure_set(samples: Sequence[MESample], mode: str, k: int, seed: int, flow_scale: float,
                        source: Optional[FlowSource] = None, fuse_mode: str = DEFAULT_FUSE_MODE,
                        jobs: int = 1) -> CandidateSet:
    """Structure-mode inputs for many samples; per-sample streams keep results order-free."""
    if mode in APEX_MODES:
        unannotated = [s.sample_id for s in samples if s.apex_idx is None]
        if unannotated:
            raise ValidationError(
                f"structure mode '{mode}' needs apex annotations; {len(unannotated)} samples "
                f"lack them (e.g. {unannotated[0]})"
            )

    def _one(sample: MESample) -> np.ndarray:
        return structure_inputs(sample, mode, k, seed, source, flow_scale, fuse_mode)

    if jobs <= 1:
        stacks = [_one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            stacks = list(pool.map(_one, samples))
    return CandidateSet([ref_of(s) for s in samples], _to_channels_first(stacks),
                        flow_channels=mode in FLOW_MODES)


def load_cached_set(cache: FlowCache, refs: Sequence[SampleRef], k: int,
                    image_size: Optional[int] = None) -> CandidateSet:
    """
    Read every sample's K fused images from a flow cache.

    Raises:
        PipelineError: listing the missing (sample, j) entries
    """
    missing = cache.missing([r.sample_id for r in refs], k)
    if missing:
        shown = ', '.join(f"({s}, {j})" for s, j in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ''
        raise PipelineError(f"flow cache {cache.root} is missing {len(missing)} entries: {shown}{more}")
    shape = (image_size, image_size) if image_size else None
    stacks = [cache.load_sample(r.sample_id, k, shape)[0] for r in refs]
    return CandidateSet(list(refs), _to_channels_first(stacks), flow_channels=True)


def write_cache(samples: Sequence[MESample], cache: FlowCache, k: int, seed: int, flow_scale: float,
                source: Optional[FlowSource] = None, fuse_mode: str = DEFAULT_FUSE_MODE,
                jobs: int = 1) -> Dict[str, List[int]]:
    """
    Compute and store every sample's K fused flow images.

    Returns:
        sample_id -> occurring indices
    """
    def _one(sample: MESample) -> Tuple[str, List[int]]:
        images, indices = candidate_inputs(sample, k, seed, source, flow_scale, fuse_mode)
        for j, (image, idx) in enumerate(zip(images, indices), 1):
            cache.write(sample.sample_id, j, image, idx)
        return sample.sample_id, indices

    if jobs <= 1:
        results = [_one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one, samples))
    logger.info("structures: cached %d x %d flow images in %s", len(samples), k, cache.root)
    return dict(results)
