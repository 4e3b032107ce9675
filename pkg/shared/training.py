"""
Training, evaluation and the leave-one-subject-out driver

Training follows a fixed recipe: Adam, cosine annealing from initial_lr to
zero over every optimization step of the run, and per-sample augmentation
(random resized crop plus horizontal flip) applied identically to all K
candidates of a sample. Every random choice comes from a tagged stream, so
a run is reproducible from its config snapshot.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from core.config import Config
from core.errors import PipelineError, ValidationError
from core.rng import make_rng
from shared.candidates import CandidateSet
from shared.losses import rank_split, total_loss
from shared.metrics import FoldRecord
from shared.model import OccurRankNet, build_model, save_checkpoint
from shared.protocol import Fold, SplitPlan, make_loso_splits
from shared.records import EpochStats, TRAIN_LOG_FILENAME, append_jsonl, load_json, save_json
from shared.utils import sanitize_filename

logger = logging.getLogger(__name__)

CROP_SCALE = (0.8, 1.0)
FOLD_RECORD_FILENAME = 'fold.json'


@dataclass(frozen=True)
class TrainOptions:
    weight_decay: float = 0.0
    init_weights: Optional[str] = None
    augment: bool = True
    tag: str = 'train'
    log_path: Optional[Path] = None


@dataclass
class Evaluation:
    predictions: np.ndarray     # N
    probabilities: np.ndarray   # N x C
    alpha: np.ndarray           # N x K

    def accuracy(self, labels: np.ndarray) -> float:
        return 100.0 * float(np.mean(self.predictions == labels)) if len(labels) else 0.0


@dataclass
class TrainResult:
    model: OccurRankNet
    epochs: List[EpochStats]
    gap_mean: float
    gap_ge_delta: float
    train_accuracy: float


def augment(batch: torch.Tensor, rng: np.random.Generator, flow_channels: bool = True,
            scale: Tuple[float, float] = CROP_SCALE) -> torch.Tensor:
    """
    Random resized crop (square, area fraction in ``scale``) and horizontal flip.

    One transform is drawn per sample and applied to all of its K
    candidates. Flipping negates channel 0 when it holds horizontal flow.

    Args:
        batch: N x K x C x H x W
    """
    n, k, c, h, w = batch.shape
    out = torch.empty_like(batch)
    for i in range(n):
        area = rng.uniform(*scale)
        side_h = max(1, min(h, int(round(h * math.sqrt(area)))))
        side_w = max(1, min(w, int(round(w * math.sqrt(area)))))
        top = int(rng.integers(0, h - side_h + 1))
        left = int(rng.integers(0, w - side_w + 1))
        flip = bool(rng.random() < 0.5)
        x = batch[i, :, :, top:top + side_h, left:left + side_w]
        if (side_h, side_w) != (h, w):
            x = F.interpolate(x, size=(h, w), mode='bilinear', align_corners=False)
        if flip:
            x = torch.flip(x, dims=[-1])
            if flow_channels:
                x = x.clone()
                x[:, 0] = -x[:, 0]
        out[i] = x
    return out


def evaluate(model: OccurRankNet, data: CandidateSet, batch_size: int = 64) -> Evaluation:
    """Eval-mode predictions, probabilities and scores for every sample."""
    model.eval()
    preds, probs, alphas = [], [], []
    inputs = torch.from_numpy(data.inputs)
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            out = model(inputs[start:start + batch_size])
            probs.append(out.prediction.numpy())
            alphas.append(out.alpha.numpy())
            preds.append(out.prediction.argmax(dim=-1).numpy())
    if not preds:
        return Evaluation(np.zeros(0, dtype=np.int64), np.zeros((0, model.num_classes), np.float32),
                          np.zeros((0, data.k), np.float32))
    return Evaluation(np.concatenate(preds), np.concatenate(probs), np.concatenate(alphas))


def gap_statistics(alpha: np.ndarray, gamma: float, delta: float) -> Tuple[float, float]:
    """(mean high-low gap, fraction of samples with gap >= delta); zeros for K < 2."""
    if alpha.size == 0 or alpha.shape[-1] < 2:
        return 0.0, 0.0
    gap = rank_split(torch.from_numpy(np.asarray(alpha, dtype=np.float64)), gamma).gap.numpy()
    return float(gap.mean()), float(np.mean(gap >= delta))


def train_model(train_set: CandidateSet, config: Config, num_classes: int,
                options: TrainOptions = TrainOptions()) -> TrainResult:
    """
    Train a fresh model on ``train_set`` for config.epochs epochs.

    Raises:
        ValidationError: empty training set
        PipelineError: non-finite loss (with epoch, step and loss terms)
    """
    n = len(train_set)
    if n == 0:
        raise ValidationError("empty training set")
    if train_set.k >= 2:
        rank_split(torch.zeros(train_set.k), config.gamma)

    model = build_model(config.backbone_spec, num_classes, config.seed, tag=f"init:{options.tag}",
                        init_weights=options.init_weights)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.initial_lr, weight_decay=options.weight_decay)
    steps_per_epoch = math.ceil(n / config.batch_size)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=config.epochs * steps_per_epoch, eta_min=0.0
    )
    inputs = torch.from_numpy(train_set.inputs)
    labels = torch.from_numpy(train_set.labels)
    if options.log_path is not None and Path(options.log_path).exists():
        Path(options.log_path).unlink()

    history: List[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        lr = optimizer.param_groups[0]['lr']
        order = make_rng(config.seed, f"shuffle:{options.tag}:{epoch}").permutation(n)
        aug_rng = make_rng(config.seed, f"aug:{options.tag}:{epoch}")
        sums = {'loss': 0.0, 'ce': 0.0, 'ro': 0.0, 'gap': 0.0, 'gap_ge_delta': 0.0}
        for step, start in enumerate(range(0, n, config.batch_size), 1):
            idx = torch.from_numpy(order[start:start + config.batch_size])
            x = inputs[idx]
            y = labels[idx]
            if options.augment:
                x = augment(x, aug_rng, train_set.flow_channels)
            out = model(x)
            terms = total_loss(out.prediction, y, out.alpha, config.delta, config.gamma, config.lambda_)
            if not torch.isfinite(terms.total):
                raise PipelineError(
                    f"non-finite loss at epoch {epoch} step {step} (lr {lr:.3g}): "
                    f"ce={terms.ce.detach().mean().item():.4g} ro={terms.ro.detach().mean().item():.4g}"
                )
            optimizer.zero_grad()
            terms.total.backward()
            optimizer.step()
            scheduler.step()
            b = len(idx)
            sums['loss'] += terms.total.item() * b
            sums['ce'] += terms.ce.detach().sum().item()
            sums['ro'] += terms.ro.detach().sum().item()
            sums['gap'] += terms.gap.sum().item()
            sums['gap_ge_delta'] += (terms.gap >= config.delta).sum().item() if train_set.k >= 2 else 0.0
        stats = EpochStats(epoch=epoch, lr=lr, **{key: value / n for key, value in sums.items()})
        history.append(stats)
        if options.log_path is not None:
            append_jsonl(options.log_path, asdict(stats))
        logger.debug("training: %s epoch %d loss %.4f ce %.4f ro %.4f gap %.4f",
                     options.tag, epoch, stats.loss, stats.ce, stats.ro, stats.gap)

    final = evaluate(model, train_set, config.batch_size)
    gap_mean, gap_ge_delta = gap_statistics(final.alpha, config.gamma, config.delta)
    return TrainResult(model, history, gap_mean, gap_ge_delta, final.accuracy(train_set.labels))


# ---------------------------------------------------------------------------
# Leave-one-subject-out
# ---------------------------------------------------------------------------

@dataclass
class FoldTask:
    fold: Fold
    train: CandidateSet
    test: CandidateSet
    config: Config
    num_classes: int
    options: TrainOptions
    fold_dir: Path
    keep_checkpoint: bool = False


@dataclass
class FoldOutcome:
    record: FoldRecord
    record_path: Path
    epochs: List[Dict] = field(default_factory=list)
    gap_mean: float = 0.0
    gap_ge_delta: float = 0.0
    train_accuracy: float = 0.0
    wall_clock: float = 0.0
    resumed: bool = False


def fold_dir_for(out_dir: Path, fold_id: str) -> Path:
    return Path(out_dir) / 'folds' / sanitize_filename(fold_id)


def run_fold(task: FoldTask) -> FoldOutcome:
    """Train on the fold's training subjects, predict its test subject, persist the record."""
    started = time.perf_counter()
    if task.fold.test_subject in set(task.train.subject_ids):
        raise PipelineError(f"fold {task.fold.fold_id}: test subject present in training data")
    task.fold_dir.mkdir(parents=True, exist_ok=True)
    options = TrainOptions(
        weight_decay=task.options.weight_decay,
        init_weights=task.options.init_weights,
        augment=task.options.augment,
        tag=f"fold:{task.fold.fold_id}",
        log_path=task.fold_dir / TRAIN_LOG_FILENAME,
    )
    result = train_model(task.train, task.config, task.num_classes, options)
    evaluation = evaluate(result.model, task.test, task.config.batch_size)
    record = FoldRecord(
        fold_id=task.fold.fold_id,
        sample_ids=task.test.sample_ids,
        predictions=[int(p) for p in evaluation.predictions],
        labels=[int(t) for t in task.test.labels],
        alpha=np.round(evaluation.alpha.astype(np.float64), 6).tolist(),
    )
    if task.keep_checkpoint:
        save_checkpoint(task.fold_dir / 'model.pt', result.model, task.train.k)
    record_path = save_json(task.fold_dir / FOLD_RECORD_FILENAME, record.to_dict())
    return FoldOutcome(
        record=record,
        record_path=record_path,
        epochs=[asdict(e) for e in result.epochs],
        gap_mean=result.gap_mean,
        gap_ge_delta=result.gap_ge_delta,
        train_accuracy=result.train_accuracy,
        wall_clock=time.perf_counter() - started,
    )


def _worker_init() -> None:
    torch.set_num_threads(1)


def run_loso(data: CandidateSet, config: Config, num_classes: int, out_dir: Path,
             options: TrainOptions = TrainOptions(), jobs: int = 1,
             completed: Optional[Set[str]] = None, plan: Optional[SplitPlan] = None,
             on_fold_done: Optional[Callable[[FoldOutcome], None]] = None,
             keep_checkpoints: bool = False) -> List[FoldOutcome]:
    """
    Leave-one-subject-out over ``data``.

    Folds listed in ``completed`` whose record exists on disk are reloaded
    instead of retrained, so an interrupted run resumes where it stopped.
    Fold results do not depend on ``jobs``' scheduling order.

    Returns:
        One outcome per fold, sorted by fold id
    """
    plan = plan or make_loso_splits(data.refs)
    plan.check_partition(data.refs)
    completed = completed or set()
    outcomes: Dict[str, FoldOutcome] = {}
    tasks: List[FoldTask] = []
    for fold in plan:
        fold_dir = fold_dir_for(out_dir, fold.fold_id)
        record_path = fold_dir / FOLD_RECORD_FILENAME
        if fold.fold_id in completed and record_path.is_file():
            record = FoldRecord.from_dict(load_json(record_path))
            outcomes[fold.fold_id] = FoldOutcome(record=record, record_path=record_path, resumed=True)
            logger.info("loso: fold %s already complete, reusing %s", fold.fold_id, record_path)
            continue
        tasks.append(FoldTask(
            fold=fold,
            train=data.subset(fold.train_ids),
            test=data.subset(fold.test_ids),
            config=config,
            num_classes=num_classes,
            options=options,
            fold_dir=fold_dir,
            keep_checkpoint=keep_checkpoints,
        ))

    def _done(outcome: FoldOutcome) -> None:
        outcomes[outcome.record.fold_id] = outcome
        correct = sum(int(p == t) for p, t in zip(outcome.record.predictions, outcome.record.labels))
        logger.info("loso: fold %s: %d/%d correct (%.1fs)", outcome.record.fold_id, correct,
                    len(outcome.record.labels), outcome.wall_clock)
        if on_fold_done is not None:
            on_fold_done(outcome)

    if jobs <= 1 or len(tasks) <= 1:
        for task in tasks:
            _done(run_fold(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as pool:
            futures = [pool.submit(run_fold, task) for task in tasks]
            for future in as_completed(futures):
                _done(future.result())
    return [outcomes[f.fold_id] for f in sorted(plan, key=lambda f: f.fold_id)]
