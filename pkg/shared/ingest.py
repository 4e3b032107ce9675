"""
Dataset ingestion: manifests, frame directories and synthetic clips

Real datasets are described by a CSV manifest whose rows point at
directories of numbered frames; indices in the manifest refer to the sorted
order of those files. Synthetic datasets are generated with a known
Gaussian-windowed displacement field so their optical flow is analytic.
"""

import csv
import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from core.errors import PipelineError, ValidationError
from core.rng import make_rng
from core.types import LabelSpace, MESample, label_space_for, synthetic_label_space
from shared.utils import list_frame_files, sanitize_filename

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ('sample_id', 'subject_id', 'dataset_id', 'frames_dir', 'onset', 'apex', 'offset', 'label')

SYNTHETIC_DATASET_ID = 'synthetic'


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    subject_id: str
    dataset_id: str
    frames_dir: Path
    onset: int
    apex: Optional[int]
    offset: int
    label: str
    line: int = 0


def _parse_index(text: str, column: str, line_num: int, source: str, *, allow_blank: bool = False) -> Optional[int]:
    text = text.strip()
    if not text:
        if allow_blank:
            return None
        raise ValidationError(f"{source}: row {line_num}: missing {column}")
    try:
        value = int(text)
    except ValueError:
        raise ValidationError(f"{source}: row {line_num}: {column} '{text}' is not an integer")
    if value < 0:
        raise ValidationError(f"{source}: row {line_num}: {column} {value} is negative")
    return value


def load_manifest(path: Union[str, Path],
                  label_spaces: Optional[Dict[str, LabelSpace]] = None) -> List[ManifestRow]:
    """
    Load and validate a dataset manifest.

    Relative ``frames_dir`` entries are resolved against the manifest's
    directory. Labels are checked against the dataset's label space: the
    ``label_spaces`` override when given, else the built-in registry, else
    the labels observed for that dataset.

    Args:
        path: UTF-8 CSV with header MANIFEST_COLUMNS
        label_spaces: Optional dataset_id -> LabelSpace override

    Returns:
        Rows in file order

    Raises:
        ValidationError: missing column, duplicate sample_id, unparsable
            index, onset > offset, label outside the label space
    """
    path = Path(path)
    source = str(path)
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            header = [h.strip() for h in (reader.fieldnames or [])]
            if not header:
                raise ValidationError(f"{source}: missing header row")
            missing = [c for c in MANIFEST_COLUMNS if c not in header]
            if missing:
                raise ValidationError(f"{source}: row 1: missing column(s) {', '.join(missing)}")
            raw_rows = [(line_num, {k.strip(): (v or '') for k, v in raw.items() if k is not None})
                        for line_num, raw in enumerate(reader, 2)]
    except OSError as e:
        raise ValidationError(f"cannot read manifest {path}: {e}")

    rows: List[ManifestRow] = []
    seen: Dict[str, int] = {}
    for line_num, raw in raw_rows:
        if not any(v.strip() for v in raw.values()):
            continue
        sample_id = raw['sample_id'].strip()
        if not sample_id:
            raise ValidationError(f"{source}: row {line_num}: missing sample_id")
        if sample_id in seen:
            raise ValidationError(
                f"{source}: row {line_num}: duplicate sample_id '{sample_id}' (first seen on row {seen[sample_id]})"
            )
        seen[sample_id] = line_num
        subject_id = raw['subject_id'].strip()
        if not subject_id:
            raise ValidationError(f"{source}: row {line_num}: missing subject_id")
        onset = _parse_index(raw['onset'], 'onset', line_num, source)
        offset = _parse_index(raw['offset'], 'offset', line_num, source)
        apex = _parse_index(raw['apex'], 'apex', line_num, source, allow_blank=True)
        if onset > offset:
            raise ValidationError(f"{source}: row {line_num}: onset {onset} > offset {offset}")
        if apex is not None and not onset <= apex <= offset:
            raise ValidationError(f"{source}: row {line_num}: apex {apex} outside [{onset}, {offset}]")
        frames_dir = Path(raw['frames_dir'].strip())
        if not frames_dir.is_absolute():
            frames_dir = path.parent / frames_dir
        rows.append(ManifestRow(
            sample_id=sample_id,
            subject_id=subject_id,
            dataset_id=raw['dataset_id'].strip() or path.stem,
            frames_dir=frames_dir,
            onset=onset,
            apex=apex,
            offset=offset,
            label=raw['label'].strip(),
            line=line_num,
        ))

    if not rows:
        logger.warning("ingest: manifest %s has no samples", path)
        return rows

    spaces = resolve_label_spaces(rows, label_spaces)
    for row in rows:
        if row.label not in spaces[row.dataset_id]:
            raise ValidationError(
                f"{source}: row {row.line}: label '{row.label}' not in label space of "
                f"'{row.dataset_id}' ({', '.join(spaces[row.dataset_id].names)})"
            )

    for dataset_id, stats in manifest_summary(rows).items():
        logger.info("ingest: %s: %d samples, %d subjects, %d classes",
                    dataset_id, stats['samples'], stats['subjects'], stats['classes'])
    return rows


def resolve_label_spaces(rows: Sequence[ManifestRow],
                         overrides: Optional[Dict[str, LabelSpace]] = None) -> Dict[str, LabelSpace]:
    """Label space per dataset_id appearing in ``rows``."""
    observed: Dict[str, List[str]] = OrderedDict()
    for row in rows:
        observed.setdefault(row.dataset_id, []).append(row.label)
    spaces = {}
    for dataset_id, labels in observed.items():
        if overrides and dataset_id in overrides:
            spaces[dataset_id] = overrides[dataset_id]
        else:
            spaces[dataset_id] = label_space_for(dataset_id, labels)
    return spaces


def manifest_summary(rows: Sequence[ManifestRow]) -> Dict[str, Dict[str, int]]:
    """Per-dataset sample, subject and distinct-label counts."""
    summary: Dict[str, Dict[str, set]] = OrderedDict()
    for row in rows:
        entry = summary.setdefault(row.dataset_id, {'samples': set(), 'subjects': set(), 'classes': set()})
        entry['samples'].add(row.sample_id)
        entry['subjects'].add(row.subject_id)
        entry['classes'].add(row.label.lower())
    return {k: {name: len(v) for name, v in entry.items()} for k, entry in summary.items()}


def write_manifest(rows: Sequence[ManifestRow], path: Union[str, Path]) -> None:
    """Write rows as a manifest; frames_dir is stored relative to the manifest when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            try:
                frames_dir = row.frames_dir.relative_to(path.parent)
            except ValueError:
                frames_dir = row.frames_dir
            writer.writerow([row.sample_id, row.subject_id, row.dataset_id, frames_dir.as_posix(),
                             row.onset, '' if row.apex is None else row.apex, row.offset, row.label])


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def read_frame(path: Path, image_size: Optional[int] = None) -> np.ndarray:
    """Read one frame as float32 H x W x C in [0, 1] (RGB order when colour)."""
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise PipelineError(f"cannot read frame image {path}")
    if image.dtype == np.uint16:
        image = image.astype(np.float32) / 65535.0
    else:
        image = image.astype(np.float32) / 255.0
    if image.ndim == 3 and image.shape[2] == 4:
        image = image[:, :, :3]
    if image.ndim == 3 and image.shape[2] == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    if image_size is not None and image.shape[:2] != (image_size, image_size):
        interpolation = cv2.INTER_AREA if image.shape[0] > image_size else cv2.INTER_LINEAR
        image = cv2.resize(image, (image_size, image_size), interpolation=interpolation)
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    return np.clip(image, 0.0, 1.0)


def load_sample(row: ManifestRow, image_size: int, label_space: Optional[LabelSpace] = None) -> MESample:
    """
    Load a manifest row's frames into an MESample.

    Args:
        row: Manifest row
        image_size: Frames are resized to image_size x image_size
        label_space: Label space for the class id (registry lookup by default)

    Returns:
        MESample with indices as given in the manifest

    Raises:
        PipelineError: missing frames or offset beyond the frame count
    """
    try:
        files = list_frame_files(row.frames_dir)
    except ValidationError as e:
        raise PipelineError(f"{row.sample_id}: {e}")
    if not files:
        raise PipelineError(f"{row.sample_id}: no frames in {row.frames_dir}")
    if row.offset >= len(files):
        raise PipelineError(
            f"{row.sample_id}: offset out of range (offset {row.offset}, {len(files)} frames in {row.frames_dir})"
        )
    frames = [read_frame(p, image_size) for p in files]
    channels = {f.shape[2] for f in frames}
    if len(channels) > 1:
        frames = [np.repeat(f, 3, axis=2) if f.shape[2] == 1 else f for f in frames]
    space = label_space or label_space_for(row.dataset_id, [row.label])
    return MESample(
        sample_id=row.sample_id,
        subject_id=row.subject_id,
        dataset_id=row.dataset_id,
        frames=np.stack(frames),
        onset_idx=row.onset,
        apex_idx=row.apex,
        offset_idx=row.offset,
        label=space.index(row.label),
    )


def load_samples(rows: Sequence[ManifestRow], image_size: int,
                 label_spaces: Optional[Dict[str, LabelSpace]] = None, jobs: int = 1) -> List[MESample]:
    """Load many rows; order is preserved regardless of ``jobs``."""
    spaces = resolve_label_spaces(rows, label_spaces)

    def _load(row: ManifestRow) -> MESample:
        return load_sample(row, image_size, spaces[row.dataset_id])

    if jobs <= 1:
        return [_load(r) for r in rows]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_load, rows))


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 8
    clips_per_subject: int = 9
    frames_per_clip: int = 24
    image_size: int = 32
    n_classes: int = 3
    motion_amplitude_px: float = 1.5
    noise_sigma: float = 0.005

    def validate(self, k: Optional[int] = None) -> None:
        if self.n_subjects < 1 or self.clips_per_subject < 1:
            raise ValidationError("synthetic spec needs at least one subject and one clip per subject")
        if self.n_classes < 2:
            raise ValidationError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.image_size < 16:
            raise ValidationError(f"image_size must be >= 16, got {self.image_size}")
        if self.frames_per_clip < 3:
            raise ValidationError(f"frames_per_clip must be >= 3, got {self.frames_per_clip}")
        if k is not None and self.frames_per_clip < k:
            raise ValidationError(f"frames_per_clip ({self.frames_per_clip}) must be >= K ({k})")
        if self.motion_amplitude_px < 0 or self.noise_sigma < 0:
            raise ValidationError("motion_amplitude_px and noise_sigma must be nonnegative")


@dataclass(frozen=True)
class ClipMotion:
    """Ground truth for one synthetic clip: unit displacement field and per-frame amplitudes."""

    field: np.ndarray       # H x W x 2, displacement at amplitude 1
    amplitudes: np.ndarray  # length T

    def flow_between(self, a: int, b: int) -> np.ndarray:
        """Analytic (first-order) flow from frame a to frame b."""
        return (self.amplitudes[b] - self.amplitudes[a]) * self.field


class SyntheticDataset(Sequence):
    """Generated samples plus the motion that produced them."""

    def __init__(self, spec: SynthSpec, samples: List[MESample], motion: Dict[str, ClipMotion]):
        self.spec = spec
        self.samples = samples
        self.motion = motion
        self.label_space = synthetic_label_space(spec.n_classes)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index):
        return self.samples[index]

    def __iter__(self) -> Iterator[MESample]:
        return iter(self.samples)


# Mirror-symmetric motion templates: (window centres as (x, y) fractions, unit directions).
# Symmetry keeps class identity under horizontal flips.
_CLASS_TEMPLATES: List[Tuple[List[Tuple[float, float]], List[Tuple[float, float]]]] = [
    ([(0.30, 0.30), (0.70, 0.30)], [(0.0, -1.0), (0.0, -1.0)]),                    # brows raise
    ([(0.32, 0.72), (0.68, 0.72)], [(-0.894, -0.447), (0.894, -0.447)]),           # lip corners pull
    ([(0.50, 0.50)], [(0.0, -1.0)]),                                               # nose wrinkle
    ([(0.38, 0.32), (0.62, 0.32)], [(1.0, 0.0), (-1.0, 0.0)]),                     # brows lower inward
    ([(0.50, 0.80)], [(0.0, 1.0)]),                                                # jaw drop
]


def _class_template(label: int) -> Tuple[List[Tuple[float, float]], List[Tuple[float, float]]]:
    if label < len(_CLASS_TEMPLATES):
        return _CLASS_TEMPLATES[label]
    # procedural symmetric pairs beyond the hand-made set
    extra = label - len(_CLASS_TEMPLATES)
    dx = 0.12 + 0.06 * (extra % 4)
    y = 0.25 + 0.1 * ((extra // 4) % 6)
    angle = math.pi * (0.25 + 0.5 * (extra % 3))
    ux, uy = math.cos(angle), -math.sin(angle)
    return [(0.5 - dx, y), (0.5 + dx, y)], [(-ux, uy), (ux, uy)]


def displacement_field(image_size: int, centres: Sequence[Tuple[float, float]],
                       directions: Sequence[Tuple[float, float]], sigma_px: float) -> np.ndarray:
    """Sum of Gaussian-windowed unit shifts, H x W x 2 (u, v)."""
    ys, xs = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    field = np.zeros((image_size, image_size, 2), dtype=np.float64)
    for (cx, cy), (dx, dy) in zip(centres, directions):
        px, py = cx * (image_size - 1), cy * (image_size - 1)
        window = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma_px ** 2))
        field[..., 0] += window * dx
        field[..., 1] += window * dy
    return field.astype(np.float32)


def amplitude_profile(n_frames: int, onset: int, apex: int, offset: int, peak: float) -> np.ndarray:
    """Raised-cosine ramp 0 -> peak (apex) -> 0, zero outside [onset, offset]."""
    t = np.arange(n_frames, dtype=np.float64)
    amp = np.zeros(n_frames, dtype=np.float64)
    if apex > onset:
        rise = (t >= onset) & (t <= apex)
        amp[rise] = 0.5 * (1.0 - np.cos(np.pi * (t[rise] - onset) / (apex - onset)))
    if offset > apex:
        fall = (t > apex) & (t <= offset)
        amp[fall] = 0.5 * (1.0 - np.cos(np.pi * (offset - t[fall]) / (offset - apex)))
    amp[apex] = 1.0
    return (peak * amp).astype(np.float32)


def _subject_base(image_size: int, rng: np.random.Generator) -> np.ndarray:
    """Face-like base pattern with subject-specific geometry and skin texture."""
    s = image_size
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float32) / (s - 1)
    base = np.full((s, s), 0.25, dtype=np.float32)
    ax, ay = 0.36 + rng.uniform(-0.03, 0.03), 0.46 + rng.uniform(-0.03, 0.03)
    face = ((xs - 0.5) / ax) ** 2 + ((ys - 0.52) / ay) ** 2 <= 1.0
    base[face] = 0.6 + rng.uniform(-0.05, 0.05)
    eye_y = 0.40 + rng.uniform(-0.02, 0.02)
    for ex in (0.35, 0.65):
        eye = ((xs - ex) / 0.07) ** 2 + ((ys - eye_y) / 0.035) ** 2 <= 1.0
        base[eye] = 0.3
    mouth = (np.abs(xs - 0.5) <= 0.14) & (np.abs(ys - (0.74 + rng.uniform(-0.02, 0.02))) <= 0.02)
    base[mouth] = 0.35
    texture_sigma = max(0.8, s / 40.0)
    texture = cv2.GaussianBlur(rng.standard_normal((s, s)).astype(np.float32), (0, 0), texture_sigma)
    texture /= max(float(texture.std()), 1e-6)
    base = cv2.GaussianBlur(base, (0, 0), 0.6) + 0.08 * texture
    return np.clip(base, 0.05, 0.95).astype(np.float32)


def _warp(base: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """frame(x) = base(x - displacement(x))."""
    s = base.shape[0]
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float32)
    map_x = xs - displacement[..., 0]
    map_y = ys - displacement[..., 1]
    return cv2.remap(base, map_x, map_y, interpolation=cv2.INTER_CUBIC, borderMode=cv2.BORDER_REFLECT)


def generate_synthetic(spec: SynthSpec, seed: int, dataset_id: str = SYNTHETIC_DATASET_ID) -> SyntheticDataset:
    """
    Generate a balanced synthetic micro-expression dataset.

    Each subject gets its own face-like base pattern; each clip deforms it
    with its class's Gaussian-windowed shift, amplitude ramping
    0 -> peak -> 0 across [onset, apex, offset]. Equal (spec, seed) pairs
    produce bit-identical pixels.

    Args:
        spec: Dataset shape and motion parameters
        seed: Master seed
        dataset_id: Dataset id stamped on every sample (composites need distinct ids)

    Returns:
        SyntheticDataset of grayscale (C=1) samples with ground-truth motion
    """
    spec.validate()
    s = spec.image_size
    sigma_px = 0.1 * s
    samples: List[MESample] = []
    motion: Dict[str, ClipMotion] = {}
    for subj in range(spec.n_subjects):
        subject_id = f"sub{subj:02d}"
        subj_rng = make_rng(seed, f"synth:subject:{subject_id}")
        base = _subject_base(s, subj_rng)
        jitter = subj_rng.uniform(-0.03, 0.03, size=2)
        for clip in range(spec.clips_per_subject):
            label = (clip + subj) % spec.n_classes
            sample_id = f"{subject_id}_clip{clip:02d}"
            rng = make_rng(seed, f"synth:clip:{sample_id}")
            t_count = spec.frames_per_clip
            onset, offset = 0, t_count - 1
            quarter = max(1, (offset - onset) // 4)
            apex = int(rng.integers(onset + quarter, offset - quarter + 1))
            peak = spec.motion_amplitude_px * float(rng.uniform(0.8, 1.2))
            centres, directions = _class_template(label)
            centres = [(cx + jitter[0], cy + jitter[1]) for cx, cy in centres]
            field = displacement_field(s, centres, directions, sigma_px)
            amplitudes = amplitude_profile(t_count, onset, apex, offset, peak)
            frames = np.empty((t_count, s, s, 1), dtype=np.float32)
            for t in range(t_count):
                frame = _warp(base, amplitudes[t] * field) if amplitudes[t] > 0 else base.copy()
                if spec.noise_sigma > 0:
                    frame = frame + rng.normal(0.0, spec.noise_sigma, size=frame.shape).astype(np.float32)
                frames[t, :, :, 0] = np.clip(frame, 0.0, 1.0)
            samples.append(MESample(
                sample_id=sample_id,
                subject_id=subject_id,
                dataset_id=dataset_id,
                frames=frames,
                onset_idx=onset,
                apex_idx=apex,
                offset_idx=offset,
                label=label,
            ))
            motion[sample_id] = ClipMotion(field=field, amplitudes=amplitudes)
    logger.info("ingest: generated %d synthetic clips (%d subjects, %d classes)",
                len(samples), spec.n_subjects, spec.n_classes)
    return SyntheticDataset(spec, samples, motion)


def write_synthetic(dataset: SyntheticDataset, out_dir: Union[str, Path]) -> Path:
    """
    Write frames as 8-bit PNGs plus ``manifest.csv`` under ``out_dir``.

    Returns:
        Path to the manifest
    """
    out_dir = Path(out_dir)
    rows = []
    for sample in dataset:
        frames_dir = out_dir / 'frames' / sanitize_filename(sample.sample_id)
        frames_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(sample.frames):
            pixels = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
            if not cv2.imwrite(str(frames_dir / f"{t:03d}.png"), pixels):
                raise PipelineError(f"failed to write frame {t} of {sample.sample_id}")
        rows.append(ManifestRow(
            sample_id=sample.sample_id,
            subject_id=sample.subject_id,
            dataset_id=sample.dataset_id,
            frames_dir=frames_dir,
            onset=sample.onset_idx,
            apex=sample.apex_idx,
            offset=sample.offset_idx,
            label=dataset.label_space.names[sample.label],
        ))
    manifest = out_dir / 'manifest.csv'
    write_manifest(rows, manifest)
    logger.info("ingest: wrote %d synthetic samples to %s", len(rows), out_dir)
    return manifest
