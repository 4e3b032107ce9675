"""Shared fixtures: synthetic datasets and metadata-only public-database manifests."""

import csv
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.config import Config  # noqa: E402
from shared.ingest import MANIFEST_COLUMNS, SynthSpec, generate_synthetic  # noqa: E402


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@pytest.fixture(scope='session')
def small_spec():
    return SynthSpec(n_subjects=3, clips_per_subject=3, frames_per_clip=12, image_size=32, n_classes=3)


@pytest.fixture(scope='session')
def small_dataset(small_spec):
    return generate_synthetic(small_spec, seed=0)


@pytest.fixture(scope='session')
def desk_dataset():
    """8 subjects x 9 clips x 3 classes, 24 frames of 32 x 32."""
    return generate_synthetic(SynthSpec(), seed=0)


@pytest.fixture
def fast_config():
    return Config(k=4, image_size=32, batch_size=8, initial_lr=1e-3, epochs=2, flow_scale=2.0,
                  backbone_spec='tiny:16')


@pytest.fixture(scope='session')
def desk_config():
    return Config(k=8, delta=0.7, gamma=0.1, lambda_=1.0, image_size=32, batch_size=8,
                  initial_lr=1e-3, epochs=40, seed=0, backbone_spec='tiny:128', flow_scale=2.0)


# ---------------------------------------------------------------------------
# Metadata-only manifests with the published subject and sample counts
# ---------------------------------------------------------------------------

def _write_manifest(path: Path, dataset_id: str, subjects, labels_for_subject):
    rows = []
    for s, n_clips in subjects:
        for c in range(n_clips):
            rows.append({
                'sample_id': f"{s}_{c:02d}",
                'subject_id': s,
                'dataset_id': dataset_id,
                'frames_dir': f"frames/{s}_{c:02d}",
                'onset': 0,
                'apex': 5,
                'offset': 10,
                'label': labels_for_subject(s, c),
            })
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return path


def _spread(total: int, n: int):
    base, extra = divmod(total, n)
    return [base + (1 if i < extra else 0) for i in range(n)]


@pytest.fixture
def casme2_manifest(tmp_path):
    """247 clips from 26 subjects; two subjects only have 'others' clips."""
    names = [f"sub{i:02d}" for i in range(1, 27)]
    subjects = list(zip(names, _spread(247, 26)))
    classes = ('happiness', 'disgust', 'repression', 'surprise', 'others')

    def label(s, c):
        return 'others' if s in ('sub25', 'sub26') else classes[c % 5]
    return _write_manifest(tmp_path / 'casme2.csv', 'casme2', subjects, label)


@pytest.fixture
def samm_manifest(tmp_path):
    """159 clips from 32 subjects; four subjects only have 'others' clips."""
    names = [f"{i:03d}" for i in range(6, 38)]
    subjects = list(zip(names, _spread(159, 32)))
    classes = ('anger', 'contempt', 'happiness', 'surprise', 'others')
    others_only = set(names[-4:])

    def label(s, c):
        return 'others' if s in others_only else classes[c % 5]
    return _write_manifest(tmp_path / 'samm.csv', 'samm', subjects, label)


@pytest.fixture
def smic_manifest(tmp_path):
    """164 clips from 16 subjects."""
    names = [f"s{i}" for i in range(1, 17)]
    subjects = list(zip(names, _spread(164, 16)))
    classes = ('positive', 'negative', 'surprise')
    return _write_manifest(tmp_path / 'smic.csv', 'smic', subjects, lambda s, c: classes[c % 3])
