"""
Evaluation protocols: leave-one-subject-out folds and composite databases

Both work on anything carrying ``sample_id``, ``subject_id``,
``dataset_id`` and ``label`` (ManifestRow or MESample), so split plans can
be checked from manifest metadata alone.
"""

import dataclasses
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import LeaveOneGroupOut

from core.errors import ValidationError
from core.types import LABEL_SPACES, LabelSpace, MESample, label_space_for, subjects_of

logger = logging.getLogger(__name__)

CDE_DATASET_ID = 'cde'
CDE_TARGETS = LABEL_SPACES['cde'].names
DROP = 'DROP'
DEFAULT_MAPPING_PATH = Path(__file__).resolve().parent.parent / 'configs' / 'cde_mapping.txt'


@dataclass(frozen=True)
class Fold:
    fold_id: str
    test_subject: str
    train_subjects: Tuple[str, ...]
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    folds: Tuple[Fold, ...]

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def check_partition(self, samples: Sequence) -> None:
        """
        Assert test sets partition ``samples`` and no fold trains on its test subject.

        Raises:
            ValidationError: on any violation
        """
        all_ids = {s.sample_id for s in samples}
        seen: Dict[str, str] = {}
        for f in self.folds:
            if f.test_subject in f.train_subjects:
                raise ValidationError(f"fold {f.fold_id}: test subject is in its own training set")
            if set(f.train_ids) & set(f.test_ids):
                raise ValidationError(f"fold {f.fold_id}: samples on both sides of the split")
            if set(f.train_ids) | set(f.test_ids) != all_ids:
                raise ValidationError(f"fold {f.fold_id}: does not cover every sample")
            for sample_id in f.test_ids:
                if sample_id in seen:
                    raise ValidationError(f"sample {sample_id} tested in folds {seen[sample_id]} and {f.fold_id}")
                seen[sample_id] = f.fold_id
        if set(seen) != all_ids:
            raise ValidationError(f"{len(all_ids - set(seen))} samples never tested")


def make_loso_splits(samples: Sequence) -> SplitPlan:
    """
    One fold per distinct subject; fold ids are the subject ids, in sorted order.

    Raises:
        ValidationError: empty dataset, duplicate sample ids or blank subject ids
    """
    if len(samples) == 0:
        raise ValidationError("cannot split an empty dataset")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate sample ids in dataset")
    groups = np.array([s.subject_id for s in samples], dtype=object)
    if any(not g for g in groups):
        raise ValidationError("every sample needs a subject_id")
    if len(set(groups)) < 2:
        raise ValidationError("leave-one-subject-out needs at least 2 subjects")
    folds = []
    logo = LeaveOneGroupOut()
    for train_idx, test_idx in logo.split(np.zeros(len(samples)), groups=groups):
        test_subjects = sorted(set(groups[test_idx]))
        test_subject = test_subjects[0]
        train_subjects = tuple(OrderedDict.fromkeys(groups[train_idx]))
        folds.append(Fold(
            fold_id=test_subject,
            test_subject=test_subject,
            train_subjects=train_subjects,
            train_ids=tuple(ids[i] for i in train_idx),
            test_ids=tuple(ids[i] for i in test_idx),
        ))
    plan = SplitPlan(tuple(folds))
    logger.debug("protocol: %d LOSO folds over %d samples", len(plan), len(samples))
    return plan


class CDEMapping:
    """Per-dataset source class -> shared class (or DROP); keys are lower-cased."""

    def __init__(self, entries: Optional[Dict[Tuple[str, str], Optional[str]]] = None):
        self._entries: Dict[Tuple[str, str], Optional[str]] = {}
        for (dataset_id, source), target in (entries or {}).items():
            self.add(dataset_id, source, target)

    def add(self, dataset_id: str, source: str, target: Optional[str]) -> None:
        if target is not None and target.upper() == DROP:
            target = None
        if target is not None:
            target = LABEL_SPACES['cde'].names[LABEL_SPACES['cde'].index(target)]
        self._entries[(dataset_id.strip().lower(), source.strip().lower())] = target

    def target(self, dataset_id: str, source: str) -> Optional[str]:
        """Shared class name, or None when dropped; KeyError when unmapped."""
        return self._entries[(dataset_id.strip().lower(), source.strip().lower())]

    def covers(self, dataset_id: str, source: str) -> bool:
        return (dataset_id.strip().lower(), source.strip().lower()) in self._entries

    def datasets(self) -> List[str]:
        return sorted({d for d, _ in self._entries})

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def from_text(cls, text: str, source: str = '<mapping>') -> 'CDEMapping':
        """
        Parse ``dataset.class=Target|DROP`` lines.

        Raises:
            ValidationError: malformed line, unknown target or duplicate key
        """
        mapping = cls()
        for line_num, raw in enumerate(text.splitlines(), 1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, target = line.partition('=')
            dataset_id, dot, cls_name = key.strip().partition('.')
            if not sep or not dot or not dataset_id or not cls_name.strip() or not target.strip():
                raise ValidationError(f"{source}:{line_num}: expected dataset.class=Target|DROP, got '{raw.strip()}'")
            if mapping.covers(dataset_id, cls_name):
                raise ValidationError(f"{source}:{line_num}: duplicate mapping for {key.strip()}")
            try:
                mapping.add(dataset_id, cls_name, target.strip())
            except ValidationError:
                raise ValidationError(
                    f"{source}:{line_num}: target '{target.strip()}' is not one of "
                    f"{', '.join(CDE_TARGETS)} or {DROP}"
                )
        return mapping


def load_mapping(path: Union[str, Path, None] = None) -> CDEMapping:
    """Load a mapping file; None loads the packaged MEGC-style default."""
    path = Path(path) if path is not None else DEFAULT_MAPPING_PATH
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ValidationError(f"cannot read mapping {path}: {e}")
    return CDEMapping.from_text(text, str(path))


@dataclass(frozen=True)
class CompositeDataset:
    items: List  # relabeled ManifestRows or MESamples
    plan: SplitPlan
    label_space: LabelSpace
    dropped: int

    @property
    def subjects(self) -> List[str]:
        return subjects_of(self.items)


def _source_label(item, spaces: Dict[str, LabelSpace]) -> str:
    if isinstance(item, MESample):
        return spaces[item.dataset_id].names[item.label]
    return item.label


def make_cde(datasets: Iterable[Sequence], mapping: CDEMapping,
             label_spaces: Optional[Dict[str, LabelSpace]] = None) -> CompositeDataset:
    """
    Merge datasets into the shared three-class composite and plan LOSO over it.

    Sample and subject ids are prefixed with their dataset id, so subjects
    from different databases never merge.

    Args:
        datasets: One sequence of items per source database
        mapping: Class mapping covering every source class present
        label_spaces: dataset_id -> LabelSpace for MESample int labels

    Raises:
        ValidationError: unmapped class, or nothing left after dropping
    """
    items = [item for dataset in datasets for item in dataset]
    spaces: Dict[str, LabelSpace] = dict(label_spaces or {})
    present = list(OrderedDict.fromkeys(i.dataset_id for i in items))
    for dataset_id in present:
        if dataset_id not in spaces:
            observed = [i.label for i in items if i.dataset_id == dataset_id and isinstance(i.label, str)]
            spaces[dataset_id] = label_space_for(dataset_id, observed or None)

    covered = mapping.datasets()
    missing = [d for d in present if d not in covered]
    if missing:
        raise ValidationError(f"mapping has no entries for {', '.join(missing)} "
                              f"(covers: {', '.join(covered) or 'nothing'})")
    unmapped = sorted({f"{i.dataset_id}.{_source_label(i, spaces)}" for i in items
                       if not mapping.covers(i.dataset_id, _source_label(i, spaces))})
    if unmapped:
        raise ValidationError(f"unmapped classes: {', '.join(unmapped)}")

    cde_space = LABEL_SPACES['cde']
    composite = []
    dropped = 0
    for item in items:
        target = mapping.target(item.dataset_id, _source_label(item, spaces))
        if target is None:
            dropped += 1
            continue
        label = cde_space.index(target) if isinstance(item, MESample) else target
        composite.append(dataclasses.replace(
            item,
            sample_id=f"{item.dataset_id}/{item.sample_id}",
            subject_id=f"{item.dataset_id}/{item.subject_id}",
            dataset_id=CDE_DATASET_ID,
            label=label,
        ))
    if not composite:
        raise ValidationError("composite dataset is empty after applying the mapping")
    plan = make_loso_splits(composite)
    logger.info("protocol: composite of %d samples, %d subjects (%d dropped)",
                len(composite), len(plan), dropped)
    return CompositeDataset(composite, plan, cde_space, dropped)
