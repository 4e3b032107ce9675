"""
Evaluation metrics from a confusion matrix

Rows of the confusion matrix are true classes, columns predictions.
Accuracy is pooled over all evaluated samples; F1 (= UF1) is the
unweighted mean of per-class F1 over all C classes; UAR is the mean recall
over classes that occur in the ground truth.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

from core.errors import ValidationError

logger = logging.getLogger(__name__)


def confusion(pred_labels: Sequence[int], true_labels: Sequence[int], num_classes: int) -> np.ndarray:
    """
    C x C count matrix, M[t][p] = samples of truth t predicted as p.

    Raises:
        ValidationError: length mismatch or label outside [0, C)
    """
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if pred.shape != true.shape:
        raise ValidationError(f"{len(pred)} predictions for {len(true)} labels")
    for name, values in (('prediction', pred), ('label', true)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValidationError(f"{name} out of range for C={num_classes}")
    if pred.size == 0:
        return np.zeros((num_classes, num_classes), dtype=np.int64)
    return confusion_matrix(true, pred, labels=np.arange(num_classes)).astype(np.int64)


def _check(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got shape {matrix.shape}")
    if matrix.sum() == 0:
        raise ValidationError("empty evaluation")
    return matrix


def accuracy(matrix: np.ndarray) -> float:
    """100 * trace / total."""
    matrix = _check(matrix)
    return 100.0 * float(np.trace(matrix)) / float(matrix.sum())


def per_class(matrix: np.ndarray) -> Dict[str, np.ndarray]:
    """Per-class precision, recall, F1, support and the undefined-F1 mask."""
    matrix = _check(matrix).astype(np.float64)
    tp = np.diag(matrix)
    predicted = matrix.sum(axis=0)
    support = matrix.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2.0 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        'precision': precision,
        'recall': recall,
        'f1': f1,
        'support': support.astype(np.int64),
        'undefined_f1': denom == 0,
    }


def f1_macro(matrix: np.ndarray) -> float:
    return float(np.mean(per_class(matrix)['f1']))


def uar(matrix: np.ndarray) -> float:
    stats = per_class(matrix)
    present = stats['support'] > 0
    return float(np.mean(stats['recall'][present]))


@dataclass
class ClassStats:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    f1_undefined: bool = False


@dataclass
class MetricsReport:
    accuracy: float
    f1_macro: float
    uf1: float
    uar: float
    n_samples: int
    per_class: List[ClassStats]
    confusion: List[List[int]]
    folds: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def flagged_classes(self) -> List[str]:
        return [c.label for c in self.per_class if c.f1_undefined]

    @property
    def classes_in_use(self) -> List[str]:
        matrix = np.asarray(self.confusion)
        used = (matrix.sum(axis=0) + matrix.sum(axis=1)) > 0
        return [c.label for c, u in zip(self.per_class, used) if u]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'f1': self.f1_macro,
            'uf1': self.uf1,
            'uar': self.uar,
            'n_samples': self.n_samples,
            'per_class': [asdict(c) for c in self.per_class],
            'confusion': self.confusion,
            'flagged_classes': self.flagged_classes,
            'folds': self.folds,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        return cls(
            accuracy=data['accuracy'],
            f1_macro=data['f1'],
            uf1=data['uf1'],
            uar=data['uar'],
            n_samples=data['n_samples'],
            per_class=[ClassStats(**c) for c in data['per_class']],
            confusion=data['confusion'],
            folds=data.get('folds', []),
        )


def metrics_report(matrix: np.ndarray, labels: Optional[Sequence[str]] = None) -> MetricsReport:
    """Every metric of one confusion matrix."""
    matrix = _check(matrix)
    stats = per_class(matrix)
    labels = list(labels) if labels is not None else [str(i) for i in range(matrix.shape[0])]
    if len(labels) != matrix.shape[0]:
        raise ValidationError(f"{len(labels)} label names for a {matrix.shape[0]}-class matrix")
    f1 = float(np.mean(stats['f1']))
    per = [
        ClassStats(label=labels[i], precision=float(stats['precision'][i]), recall=float(stats['recall'][i]),
                   f1=float(stats['f1'][i]), support=int(stats['support'][i]),
                   f1_undefined=bool(stats['undefined_f1'][i]))
        for i in range(matrix.shape[0])
    ]
    for c in per:
        if c.f1_undefined:
            logger.debug("metrics: class %s never predicted correctly nor present; F1 scored 0", c.label)
    return MetricsReport(
        accuracy=accuracy(matrix),
        f1_macro=f1,
        uf1=f1,
        uar=uar(matrix),
        n_samples=int(matrix.sum()),
        per_class=per,
        confusion=matrix.astype(int).tolist(),
    )


@dataclass
class FoldRecord:
    """Per-sample outcome of one fold."""

    fold_id: str
    sample_ids: List[str]
    predictions: List[int]
    labels: List[int]
    alpha: List[List[float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FoldRecord':
        return cls(**data)


def aggregate_loso(records: Sequence[FoldRecord], num_classes: int, labels: Optional[Sequence[str]] = None,
                   expected_ids: Optional[Sequence[str]] = None) -> MetricsReport:
    """
    Pool every fold's predictions into one confusion matrix.

    Per-fold (correct, total, accuracy) is kept in ``report.folds`` for
    diagnostics. Fold order does not affect the result.

    Raises:
        ValidationError: a sample in two folds, or (with expected_ids) a sample missing
    """
    seen: Dict[str, str] = {}
    pred_all: List[int] = []
    true_all: List[int] = []
    fold_stats = []
    for record in sorted(records, key=lambda r: r.fold_id):
        if not len(record.sample_ids) == len(record.predictions) == len(record.labels):
            raise ValidationError(f"fold {record.fold_id}: ragged record")
        for sample_id in record.sample_ids:
            if sample_id in seen:
                raise ValidationError(f"sample {sample_id} appears in folds {seen[sample_id]} and {record.fold_id}")
            seen[sample_id] = record.fold_id
        correct = int(sum(int(p == t) for p, t in zip(record.predictions, record.labels)))
        total = len(record.labels)
        fold_stats.append({
            'fold_id': record.fold_id,
            'correct': correct,
            'total': total,
            'accuracy': 100.0 * correct / total if total else None,
        })
        pred_all.extend(record.predictions)
        true_all.extend(record.labels)
    if expected_ids is not None:
        missing = sorted(set(expected_ids) - set(seen))
        if missing:
            raise ValidationError(f"{len(missing)} samples missing from fold records (e.g. {missing[0]})")
    report = metrics_report(confusion(pred_all, true_all, num_classes), labels)
    report.folds = fold_stats
    return report


def format_table(report: MetricsReport, title: str = '') -> str:
    """Human-readable summary: headline metrics, per-class table, confusion matrix."""
    lines = []
    if title:
        lines += [title, '=' * len(title)]
    lines.append(f"Accuracy {report.accuracy:6.2f}%   F1 {report.f1_macro:.4f}   "
                 f"UF1 {report.uf1:.4f}   UAR {report.uar:.4f}   (n={report.n_samples})")
    width = max([len(c.label) for c in report.per_class] + [5])
    lines.append('')
    lines.append(f"{'class':<{width}}  precision  recall     f1  support")
    for c in report.per_class:
        flag = '  *' if c.f1_undefined else ''
        lines.append(f"{c.label:<{width}}  {c.precision:9.4f}  {c.recall:6.4f}  {c.f1:5.4f}  {c.support:7d}{flag}")
    if report.flagged_classes:
        lines.append("* F1 undefined (no predictions and no support); scored 0")
    lines.append('')
    lines.append('confusion (rows = truth)')
    header = ' ' * width + ''.join(f"{c.label[:6]:>8}" for c in report.per_class)
    lines.append(header)
    for c, row in zip(report.per_class, report.confusion):
        lines.append(f"{c.label:<{width}}" + ''.join(f"{v:8d}" for v in row))
    return '\n'.join(lines)
