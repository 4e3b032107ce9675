"""
Domain value types: micro-expression samples and label spaces
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.errors import ValidationError


@dataclass(frozen=True)
class LabelSpace:
    """Ordered class names; ids are positions in ``names``."""

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, 'names', names)
        if not names:
            raise ValidationError("label space needs at least one class")
        lowered = [n.lower() for n in names]
        if len(set(lowered)) != len(lowered):
            raise ValidationError(f"duplicate class names in {names}")

    @property
    def C(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        """Class id for a name (case-insensitive)."""
        lowered = name.strip().lower()
        for i, n in enumerate(self.names):
            if n.lower() == lowered:
                return i
        raise ValidationError(f"label '{name}' not in label space ({', '.join(self.names)})")

    def __contains__(self, name: object) -> bool:
        if not isinstance(name, str):
            return False
        return name.strip().lower() in (n.lower() for n in self.names)

    def one_hot(self, label: int) -> np.ndarray:
        """y^g: length-C vector with a single 1 at ``label``."""
        if not 0 <= label < self.C:
            raise ValidationError(f"class id {label} out of range for C={self.C}")
        y = np.zeros(self.C, dtype=np.float32)
        y[label] = 1.0
        return y


LABEL_SPACES: Dict[str, LabelSpace] = {
    'casme2': LabelSpace(('happiness', 'disgust', 'repression', 'surprise', 'others')),
    'smic': LabelSpace(('positive', 'negative', 'surprise')),
    'samm': LabelSpace(('anger', 'contempt', 'happiness', 'surprise', 'others')),
    'cde': LabelSpace(('Positive', 'Negative', 'Surprise')),
}


def synthetic_label_space(n_classes: int) -> LabelSpace:
    return LabelSpace(tuple(f"class{i}" for i in range(n_classes)))


def label_space_for(dataset_id: str, observed: Optional[Sequence[str]] = None) -> LabelSpace:
    """
    Resolve the label space for a dataset id.

    Known public databases use the registry; ``synthetic*`` ids use class0..;
    anything else is built from the observed labels in sorted order.
    """
    key = dataset_id.strip().lower()
    if key in LABEL_SPACES:
        return LABEL_SPACES[key]
    if observed is not None:
        if key.startswith('synthetic'):
            n = len({o.strip().lower() for o in observed})
            space = synthetic_label_space(max(n, 2))
            if all(o in space for o in observed):
                return space
        return LabelSpace(tuple(sorted({o.strip() for o in observed}, key=str.lower)))
    raise ValidationError(f"no label space registered for dataset '{dataset_id}'")


@dataclass(frozen=True, eq=False)
class MESample:
    """One micro-expression clip with its annotations."""

    sample_id: str
    subject_id: str
    dataset_id: str
    frames: np.ndarray = field(repr=False)  # T x H x W x C, float32 in [0, 1]
    onset_idx: int
    offset_idx: int
    label: int
    apex_idx: Optional[int] = None

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 3:
            frames = frames[..., np.newaxis]
        if frames.ndim != 4 or frames.shape[-1] not in (1, 3):
            raise ValidationError(
                f"{self.sample_id}: frames must be T x H x W x C with C in (1, 3), got {frames.shape}"
            )
        frames = frames.astype(np.float32, copy=False)
        frames.setflags(write=False)
        object.__setattr__(self, 'frames', frames)
        n = frames.shape[0]
        if not 0 <= self.onset_idx <= self.offset_idx < n:
            raise ValidationError(
                f"{self.sample_id}: need 0 <= onset ({self.onset_idx}) <= offset "
                f"({self.offset_idx}) < frame count ({n})"
            )
        if self.apex_idx is not None and not self.onset_idx <= self.apex_idx <= self.offset_idx:
            raise ValidationError(
                f"{self.sample_id}: apex {self.apex_idx} outside [{self.onset_idx}, {self.offset_idx}]"
            )
        if self.label < 0:
            raise ValidationError(f"{self.sample_id}: negative class id {self.label}")

    @property
    def span(self) -> int:
        """Number of frames in the annotated [onset, offset] span."""
        return self.offset_idx - self.onset_idx + 1

    def check_length(self, k: int) -> None:
        """The annotated span must hold at least K frames."""
        if self.span < k:
            raise ValidationError(
                f"{self.sample_id}: span of {self.span} frames between onset and offset is shorter than K={k}"
            )

    def frame(self, idx: int) -> np.ndarray:
        return self.frames[idx]


def subjects_of(samples: Sequence) -> List[str]:
    """Distinct subject ids in first-seen order."""
    seen: Dict[str, None] = {}
    for s in samples:
        seen.setdefault(s.subject_id, None)
    return list(seen)
