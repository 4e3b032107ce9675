"""
Occurring-frame candidates

A clip's annotated span [onset, offset] is cut into K equal contiguous
segments; one occurring frame is drawn from each, and each is paired with
the clip's onset and offset frames.
"""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.errors import ValidationError
from core.rng import make_rng
from core.types import MESample

logger = logging.getLogger(__name__)

Segment = Tuple[int, int]


@dataclass(frozen=True)
class SegmentBounds:
    """K inclusive (start, end) pairs partitioning [onset, offset]."""

    segments: Tuple[Segment, ...]

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, index: int) -> Segment:
        return self.segments[index]

    @property
    def lengths(self) -> List[int]:
        return [end - start + 1 for start, end in self.segments]


@dataclass(frozen=True, eq=False)
class ThreeOCandidate:
    """(onset, occurring, offset) frame triple for candidate j (1-based) of one sample."""

    sample_id: str
    j: int
    onset_frame: np.ndarray = field(repr=False)
    occurring_frame: np.ndarray = field(repr=False)
    offset_frame: np.ndarray = field(repr=False)
    occurring_idx: int
    segment: Segment


def segment_bounds(onset_idx: int, offset_idx: int, k: int) -> SegmentBounds:
    """
    Partition [onset_idx, offset_idx] into K contiguous segments.

    Lengths differ by at most one; the first (span mod K) segments get the
    extra frame.

    Raises:
        ValidationError: span shorter than K
    """
    if k < 1:
        raise ValidationError(f"K must be >= 1, got {k}")
    span = offset_idx - onset_idx + 1
    if onset_idx < 0 or span < k:
        raise ValidationError(
            f"range [{onset_idx}, {offset_idx}] holds {max(span, 0)} frames, fewer than K={k}"
        )
    base, extra = divmod(span, k)
    segments = []
    start = onset_idx
    for j in range(k):
        length = base + (1 if j < extra else 0)
        segments.append((start, start + length - 1))
        start += length
    return SegmentBounds(tuple(segments))


def sample_occurring(bounds: SegmentBounds, rng: np.random.Generator) -> List[int]:
    """One index drawn uniformly from each segment, in segment order."""
    return [int(rng.integers(start, end + 1)) for start, end in bounds]


def occurring_stream_tag(sample_id: str) -> str:
    return f"occ:{sample_id}"


def build_candidates(sample: MESample, k: int, rng: Optional[np.random.Generator] = None,
                     seed: int = 0) -> List[ThreeOCandidate]:
    """
    Build the K candidates of one sample.

    Args:
        sample: Clip whose annotated span holds at least K frames
        k: Segment count
        rng: Random stream; defaults to ``make_rng(seed, "occ:<sample_id>")``
            so each sample draws from its own stream
        seed: Seed for the default stream

    Returns:
        K candidates ordered by segment
    """
    sample.check_length(k)
    bounds = segment_bounds(sample.onset_idx, sample.offset_idx, k)
    if rng is None:
        rng = make_rng(seed, occurring_stream_tag(sample.sample_id))
    indices = sample_occurring(bounds, rng)
    onset = sample.frame(sample.onset_idx)
    offset = sample.frame(sample.offset_idx)
    return [
        ThreeOCandidate(
            sample_id=sample.sample_id,
            j=j,
            onset_frame=onset,
            occurring_frame=sample.frame(idx),
            offset_frame=offset,
            occurring_idx=idx,
            segment=segment,
        )
        for j, (idx, segment) in enumerate(zip(indices, bounds), 1)
    ]


def candidate_table(samples: Sequence[MESample], k: int, seed: int) -> List[Tuple[str, int, int, int, int]]:
    """(sample_id, j, segment_start, segment_end, occurring_idx) rows for every sample."""
    rows = []
    for sample in samples:
        for c in build_candidates(sample, k, seed=seed):
            rows.append((c.sample_id, c.j, c.segment[0], c.segment[1], c.occurring_idx))
    return rows


class SampleRef(NamedTuple):
    sample_id: str
    subject_id: str
    dataset_id: str
    label: int


@dataclass
class CandidateSet:
    """
    Network-ready candidate inputs for many samples.

    ``inputs`` is N x K x 3 x H x W float32. ``flow_channels`` says whether
    channel 0 holds horizontal displacement, which a horizontal flip must
    negate.
    """

    refs: List[SampleRef]
    inputs: np.ndarray
    flow_channels: bool = True

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        if self.inputs.ndim != 5 or self.inputs.shape[2] != 3:
            raise ValidationError(f"candidate inputs must be N x K x 3 x H x W, got {self.inputs.shape}")
        if len(self.refs) != self.inputs.shape[0]:
            raise ValidationError(f"{len(self.refs)} samples for {self.inputs.shape[0]} input stacks")

    def __len__(self) -> int:
        return len(self.refs)

    @property
    def k(self) -> int:
        return self.inputs.shape[1]

    @property
    def sample_ids(self) -> List[str]:
        return [r.sample_id for r in self.refs]

    @property
    def subject_ids(self) -> List[str]:
        return [r.subject_id for r in self.refs]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.refs], dtype=np.int64)

    def subset(self, sample_ids: Sequence[str]) -> 'CandidateSet':
        """Samples in the order given."""
        position = {r.sample_id: i for i, r in enumerate(self.refs)}
        try:
            idx = [position[s] for s in sample_ids]
        except KeyError as e:
            raise ValidationError(f"sample {e.args[0]} not in candidate set")
        return CandidateSet([self.refs[i] for i in idx], self.inputs[idx], self.flow_channels)

    def select_candidate(self, j: int) -> 'CandidateSet':
        """Single-candidate set holding only candidate j (1-based)."""
        if not 1 <= j <= self.k:
            raise ValidationError(f"candidate {j} outside 1..{self.k}")
        return CandidateSet(list(self.refs), self.inputs[:, j - 1:j], self.flow_channels)
