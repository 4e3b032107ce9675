"""
Optical flow estimation and flow-image rendering

A candidate's network input is built from two dense flow fields
(onset -> occurring, occurring -> offset) averaged as vectors and rendered
as a (u, v, magnitude) image scaled by ``flow_scale``. Flow comes from a FlowSource:
the reference Farneback estimator, or externally computed fields imported
from flow-cache containers.
"""

import logging
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from core.errors import PipelineError, ValidationError
from shared.candidates import ThreeOCandidate
from shared.flow_cache import entry_path, read_import

logger = logging.getLogger(__name__)

FUSE_MODES = ('vector', 'render')
DEFAULT_FUSE_MODE = 'vector'


def to_gray(frame: np.ndarray) -> np.ndarray:
    """H x W x C frame in [0, 1] -> H x W float32."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 2:
        return frame
    if frame.shape[2] == 1:
        return frame[:, :, 0]
    if frame.shape[2] == 3:
        return cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
    raise ValidationError(f"frames must have 1 or 3 channels, got {frame.shape[2]}")


class FlowSource(ABC):
    """Anything that can supply the two flow fields of a candidate."""

    name = 'flow'

    @abstractmethod
    def candidate_flows(self, candidate: ThreeOCandidate) -> Tuple[np.ndarray, np.ndarray]:
        """(onset -> occurring, occurring -> offset) fields, each H x W x 2."""


class FlowEstimator(FlowSource):
    """Dense two-frame estimator: a flow field mapping frame_a onto frame_b."""

    @abstractmethod
    def estimate(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        pass

    def candidate_flows(self, candidate: ThreeOCandidate) -> Tuple[np.ndarray, np.ndarray]:
        return (estimate_flow(candidate.onset_frame, candidate.occurring_frame, self),
                estimate_flow(candidate.occurring_frame, candidate.offset_frame, self))


class FarnebackEstimator(FlowEstimator):
    """
    Pyramidal polynomial-expansion flow (OpenCV Farneback).

    Pyramid depth and window size follow the frame size unless given, so
    the same estimator works for 32 px desk clips and 112 px faces.
    """

    name = 'farneback'

    def __init__(self, levels: Optional[int] = None, winsize: Optional[int] = None,
                 iterations: int = 5, poly_n: int = 5, poly_sigma: float = 1.1):
        self.levels = levels
        self.winsize = winsize
        self.iterations = iterations
        self.poly_n = poly_n
        self.poly_sigma = poly_sigma

    def _params(self, size: int) -> Tuple[int, int]:
        levels = self.levels or max(1, int(math.log2(max(size, 8) / 8)))
        winsize = self.winsize or (max(5, min(15, size // 4)) | 1)
        return levels, winsize

    def estimate(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        a = to_gray(frame_a) * 255.0
        b = to_gray(frame_b) * 255.0
        levels, winsize = self._params(min(a.shape))
        flow = cv2.calcOpticalFlowFarneback(
            a, b, None, 0.5, levels, winsize, self.iterations,
            self.poly_n, self.poly_sigma, cv2.OPTFLOW_FARNEBACK_GAUSSIAN,
        )
        return flow.astype(np.float32)


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray,
                  estimator: Optional[FlowEstimator] = None) -> np.ndarray:
    """
    Dense displacement field mapping frame_a onto frame_b.

    Args:
        frame_a: H x W x C frame (C = 1 or 3)
        frame_b: Frame of identical shape
        estimator: Estimator to use (Farneback by default)

    Returns:
        H x W x 2 float32 field (u horizontal, v vertical, pixels)

    Raises:
        ValidationError: shape mismatch
        PipelineError: estimator produced non-finite values
    """
    frame_a = np.asarray(frame_a)
    frame_b = np.asarray(frame_b)
    if frame_a.shape != frame_b.shape:
        raise ValidationError(f"frame shape mismatch: {frame_a.shape} vs {frame_b.shape}")
    if np.array_equal(frame_a, frame_b):
        return np.zeros(frame_a.shape[:2] + (2,), dtype=np.float32)
    estimator = estimator or FarnebackEstimator()
    flow = estimator.estimate(frame_a, frame_b)
    if flow.shape != frame_a.shape[:2] + (2,):
        raise PipelineError(f"{estimator.name}: returned field of shape {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise PipelineError(f"{estimator.name}: non-finite flow values")
    limit = float(max(frame_a.shape[:2]))
    return np.clip(flow, -limit, limit)


def render_flow(field: np.ndarray, flow_scale: float) -> np.ndarray:
    """
    Render one field as an H x W x 3 image (u/s, v/s, |f|/s).

    u and v are clipped to [-1, 1], the magnitude to [0, 1].
    """
    if flow_scale <= 0:
        raise ValidationError(f"flow_scale must be > 0, got {flow_scale}")
    field = np.asarray(field, dtype=np.float32)
    if field.ndim != 3 or field.shape[2] != 2:
        raise ValidationError(f"flow field must be H x W x 2, got {field.shape}")
    u = field[..., 0] / flow_scale
    v = field[..., 1] / flow_scale
    magnitude = np.sqrt(u * u + v * v)
    image = np.stack([np.clip(u, -1.0, 1.0), np.clip(v, -1.0, 1.0), np.clip(magnitude, 0.0, 1.0)], axis=-1)
    return image.astype(np.float32)


def fuse_flows(flow_oo: np.ndarray, flow_of: np.ndarray, flow_scale: float,
               mode: str = DEFAULT_FUSE_MODE) -> np.ndarray:
    """
    Fuse the two candidate fields into one 3-channel flow image.

    ``vector`` averages the flow vectors and renders the mean, so channel 2
    is the norm of channels 0 and 1 up to clipping. ``render`` averages the
    two renderings instead, which keeps the magnitude of opposite motions.
    Both are symmetric in their arguments.

    Raises:
        ValidationError: shape mismatch or unknown mode
    """
    flow_oo = np.asarray(flow_oo, dtype=np.float32)
    flow_of = np.asarray(flow_of, dtype=np.float32)
    if flow_oo.shape != flow_of.shape:
        raise ValidationError(f"flow shape mismatch: {flow_oo.shape} vs {flow_of.shape}")
    if mode == 'render':
        return (0.5 * (render_flow(flow_oo, flow_scale) + render_flow(flow_of, flow_scale))).astype(np.float32)
    if mode == 'vector':
        return render_flow(0.5 * (flow_oo + flow_of), flow_scale)
    raise ValidationError(f"unknown fuse mode '{mode}' (expected one of {', '.join(FUSE_MODES)})")


def build_input(candidate: ThreeOCandidate, source: Optional[FlowSource], flow_scale: float,
                mode: str = DEFAULT_FUSE_MODE) -> np.ndarray:
    """Network input for one candidate: fused onset->occurring and occurring->offset flow."""
    flow_oo, flow_of = (source or FarnebackEstimator()).candidate_flows(candidate)
    return fuse_flows(flow_oo, flow_of, flow_scale, mode)


class ImportedFlows(FlowSource):
    """
    Externally computed flow fields (e.g. from a learned flow network).

    Layout: ``<import_dir>/<sample_id>/<jj>.l3o`` holding two C=2 records,
    onset -> occurring then occurring -> offset. The record header's
    occurring index must match the candidate's.
    """

    name = 'import'

    def __init__(self, import_dir: Union[str, Path]):
        self.import_dir = Path(import_dir)

    def path_for(self, sample_id: str, j: int) -> Path:
        return entry_path(self.import_dir, sample_id, j)

    def missing(self, candidates: Sequence[ThreeOCandidate]) -> List[Tuple[str, int]]:
        return [(c.sample_id, c.j) for c in candidates if not self.path_for(c.sample_id, c.j).is_file()]

    def candidate_flows(self, candidate: ThreeOCandidate) -> Tuple[np.ndarray, np.ndarray]:
        path = self.path_for(candidate.sample_id, candidate.j)
        if not path.is_file():
            raise PipelineError(f"no imported flow for ({candidate.sample_id}, {candidate.j}) at {path}")
        flow_oo, flow_of, occurring_idx = read_import(path)
        if occurring_idx != candidate.occurring_idx:
            raise PipelineError(
                f"{path}: imported flow was computed for occurring frame {occurring_idx}, "
                f"candidate uses {candidate.occurring_idx}"
            )
        expected = candidate.onset_frame.shape[:2] + (2,)
        if flow_oo.shape != expected:
            raise PipelineError(f"{path}: imported flow shape {flow_oo.shape}, expected {expected}")
        return flow_oo, flow_of
