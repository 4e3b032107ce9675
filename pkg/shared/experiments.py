"""
Experiment drivers shared by the subcommands

Loading data, preparing flow caches, evaluating candidate sets under the
leave-one-subject-out protocol and writing the run documents. The
subcommand modules only parse arguments and call into here, so every
experiment can also be driven from Python.
"""

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import Config
from core.errors import PipelineError, ValidationError
from core.run_index import RunIndex
from core.types import LabelSpace, MESample
from shared.candidates import CandidateSet, SampleRef, build_candidates, candidate_table
from shared.flow import DEFAULT_FUSE_MODE, FarnebackEstimator, FlowSource, ImportedFlows
from shared.flow_cache import CANDIDATES_FILENAME, FlowCache
from shared.ingest import ManifestRow, load_manifest, load_samples, resolve_label_spaces
from shared.metrics import MetricsReport, aggregate_loso, format_table
from shared.protocol import SplitPlan
from shared.records import (
    METRICS_FILENAME, REPORT_FILENAME, RUN_RECORD_FILENAME, RunRecord, save_json
)
from shared.structures import build_structure_set, load_cached_set, write_cache
from shared.training import FoldOutcome, TrainOptions, run_loso
from shared.utils import parse_value_list

logger = logging.getLogger(__name__)

FLOW_SOURCES = ('reference', 'import')
SWEEP_PARAMS = ('k', 'delta', 'gamma', 'lambda', 'resample')


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def make_flow_source(name: str, import_dir: Union[str, Path, None] = None) -> FlowSource:
    """``reference`` (Farneback) or ``import`` (precomputed fields under import_dir)."""
    if name == 'reference':
        return FarnebackEstimator()
    if name == 'import':
        if import_dir is None:
            raise ValidationError("--flow import needs --import-dir")
        return ImportedFlows(import_dir)
    raise ValidationError(f"unknown flow source '{name}' (expected one of {', '.join(FLOW_SOURCES)})")


def single_label_space(spaces: Dict[str, LabelSpace]) -> LabelSpace:
    """The one label space of a single-database run."""
    if len(spaces) != 1:
        raise ValidationError(
            f"manifest mixes datasets ({', '.join(spaces)}); evaluate them separately or use cde"
        )
    return next(iter(spaces.values()))


def refs_from_rows(rows: Sequence[ManifestRow], spaces: Dict[str, LabelSpace]) -> List[SampleRef]:
    return [SampleRef(r.sample_id, r.subject_id, r.dataset_id, spaces[r.dataset_id].index(r.label)) for r in rows]


def load_dataset(manifest: Union[str, Path], image_size: int,
                 jobs: int = 1) -> Tuple[List[MESample], Dict[str, LabelSpace]]:
    """Load a manifest's samples (frames resized to image_size) and their label spaces."""
    rows = load_manifest(manifest)
    if not rows:
        raise ValidationError(f"manifest {manifest} has no samples")
    spaces = resolve_label_spaces(rows)
    return load_samples(rows, image_size, spaces, jobs), spaces


def filter_ids(items: Sequence, keep: Optional[Sequence[str]]) -> List:
    """Items whose sample_id is listed in ``keep`` (all when keep is None)."""
    if keep is None:
        return list(items)
    known = {i.sample_id for i in items}
    unknown = [s for s in keep if s not in known]
    if unknown:
        raise ValidationError(f"{len(unknown)} listed samples are not in the manifest (e.g. {unknown[0]})")
    wanted = set(keep)
    return [i for i in items if i.sample_id in wanted]


# ---------------------------------------------------------------------------
# Flow caches
# ---------------------------------------------------------------------------

def cache_meta(config: Config, flow: str, fuse_mode: str, seed: int, n_samples: int) -> Dict[str, Any]:
    return {
        'k': config.k,
        'seed': seed,
        'flow_scale': config.flow_scale,
        'fuse_mode': fuse_mode,
        'flow': flow,
        'image_size': config.image_size,
        'samples': n_samples,
    }


def write_candidate_table(samples: Sequence[MESample], k: int, seed: int, path: Union[str, Path]) -> Path:
    """Occurring-frame draws as CSV, so external flow can be computed for exactly these frames."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(('sample_id', 'j', 'segment_start', 'segment_end', 'occurring_idx'))
        writer.writerows(candidate_table(samples, k, seed))
    return path


def prepare_cache(samples: Sequence[MESample], cache_root: Union[str, Path], config: Config,
                  flow: str = 'reference', import_dir: Union[str, Path, None] = None,
                  fuse_mode: str = DEFAULT_FUSE_MODE, jobs: int = 1) -> FlowCache:
    """
    Draw candidates, estimate or import their flows and store the fused images.

    Raises:
        ValidationError: a clip shorter than K frames
        PipelineError: imported flows missing for some (sample, j) pairs
    """
    for sample in samples:
        sample.check_length(config.k)
    source = make_flow_source(flow, import_dir)
    if isinstance(source, ImportedFlows):
        missing = [pair for s in samples for pair in source.missing(build_candidates(s, config.k, seed=config.seed))]
        if missing:
            shown = ', '.join(f"({s}, {j})" for s, j in missing[:10])
            more = f" and {len(missing) - 10} more" if len(missing) > 10 else ''
            raise PipelineError(
                f"{source.import_dir} lacks imported flow for {len(missing)} candidates: {shown}{more}"
            )
    cache = FlowCache(cache_root)
    cache.root.mkdir(parents=True, exist_ok=True)
    write_candidate_table(samples, config.k, config.seed, cache.root / CANDIDATES_FILENAME)
    write_cache(samples, cache, config.k, config.seed, config.flow_scale, source, fuse_mode, jobs)
    cache.write_meta(cache_meta(config, flow, fuse_mode, config.seed, len(samples)))
    return cache


def check_cache(cache: FlowCache, config: Config, fuse_mode: Optional[str] = None) -> Dict[str, Any]:
    """
    Refuse a cache built with a different K, image size, flow scale or seed,
    or with another fuse mode when ``fuse_mode`` is given.

    Returns:
        The cache metadata
    """
    meta = cache.read_meta()
    expected = {'k': config.k, 'image_size': config.image_size, 'flow_scale': config.flow_scale,
                'seed': config.seed}
    if fuse_mode is not None:
        expected['fuse_mode'] = fuse_mode
    for key, value in expected.items():
        if key in meta and meta[key] != value:
            raise ValidationError(
                f"flow cache {cache.root} was built with {key}={meta[key]}, this run has {key}={value}"
            )
    return meta


def cached_candidate_set(cache_root: Union[str, Path], refs: Sequence[SampleRef], config: Config,
                         fuse_mode: Optional[str] = None) -> CandidateSet:
    cache = FlowCache(cache_root)
    check_cache(cache, config, fuse_mode)
    return load_cached_set(cache, refs, config.k, config.image_size)



# ---------------------------------------------------------------------------
# Leave-one-subject-out evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationResult:
    report: MetricsReport
    out_dir: Path
    run_id: Optional[str] = None
    gap_mean: float = 0.0
    gap_ge_delta: float = 0.0
    wall_clock: float = 0.0
    outcomes: List[FoldOutcome] = field(default_factory=list, repr=False)


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def evaluate_loso(data: CandidateSet, config: Config, label_space: LabelSpace, out_dir: Union[str, Path],
                  command: str = 'loso', options: TrainOptions = TrainOptions(), jobs: int = 1,
                  run_index: Optional[RunIndex] = None, plan: Optional[SplitPlan] = None,
                  keep_checkpoints: bool = False, extra: Optional[Dict[str, Any]] = None,
                  title: str = '', resume: bool = True) -> EvaluationResult:
    """
    Run every fold, pool the predictions and write the run documents.

    Writes ``metrics.json``, ``report.txt`` and ``run_record.json`` under
    ``out_dir`` plus one directory per fold. With a run index, finished
    folds are recorded as they complete and skipped when the same command
    and config are rerun into the same directory, unless
    ``resume`` is False.
    """
    started = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = dict(extra or {})
    run_id = None
    completed = set()
    if run_index is not None:
        key = {**config.snapshot(), **{k: v for k, v in extra.items() if isinstance(v, (str, int, float, bool))}}
        run_id = run_index.start_run(command, out_dir.resolve(), key, label=title or command, resume=resume)
        completed = run_index.completed_folds(run_id)
        if completed:
            logger.info("experiments: resuming %s run %s, %d folds already done", command, run_id, len(completed))

    def _on_fold_done(outcome: FoldOutcome) -> None:
        if run_index is not None and run_id is not None:
            run_index.mark_fold_done(run_id, outcome.record.fold_id, outcome.record_path)

    try:
        outcomes = run_loso(data, config, label_space.C, out_dir, options, jobs, completed, plan,
                            _on_fold_done, keep_checkpoints)
        report = aggregate_loso([o.record for o in outcomes], label_space.C, label_space.names,
                                expected_ids=data.sample_ids)
    except Exception:
        if run_index is not None and run_id is not None:
            run_index.finish_run(run_id, status='failed')
        raise

    fresh = [o for o in outcomes if not o.resumed]
    gap_mean = _mean([o.gap_mean for o in fresh])
    gap_ge_delta = _mean([o.gap_ge_delta for o in fresh])
    wall_clock = time.perf_counter() - started

    metrics_path = save_json(out_dir / METRICS_FILENAME, report.to_dict())
    heading = title or f"{command}: {len(outcomes)} folds, K={data.k}"
    (out_dir / REPORT_FILENAME).write_text(format_table(report, heading) + '\n', encoding='utf-8')
    extra.update({
        'gap_mean': gap_mean,
        'gap_ge_delta': gap_ge_delta,
        'folds': [{
            'fold_id': o.record.fold_id,
            'record': str(o.record_path),
            'resumed': o.resumed,
            'gap_mean': o.gap_mean,
            'gap_ge_delta': o.gap_ge_delta,
            'train_accuracy': o.train_accuracy,
            'wall_clock': o.wall_clock,
        } for o in outcomes],
    })
    if run_id is not None:
        extra['run_id'] = run_id
    RunRecord(
        command=command,
        config=config.snapshot(),
        epochs=[{'fold_id': o.record.fold_id, **e} for o in fresh for e in o.epochs],
        metrics_path=str(metrics_path),
        wall_clock=wall_clock,
        extra=extra,
    ).save(out_dir / RUN_RECORD_FILENAME)
    if run_index is not None and run_id is not None:
        run_index.finish_run(run_id, report.to_dict(), wall_clock)
    logger.info("experiments: %s accuracy %.2f%% UF1 %.4f UAR %.4f (%.1fs)",
                command, report.accuracy, report.uf1, report.uar, wall_clock)
    return EvaluationResult(report, out_dir, run_id, gap_mean, gap_ge_delta, wall_clock, outcomes)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    label: str
    config: Config
    occurring_seed: int


def sweep_points(config: Config, param: str, values: Optional[str] = None, times: int = 5) -> List[SweepPoint]:
    """
    Configurations of a one-parameter grid sweep.

    ``resample`` repeats the run ``times`` times with occurring-frame seeds
    seed, seed+1, ...; the training seed stays fixed. Every other parameter
    takes ``values`` in range syntax (``4..16:2``) or as a comma list.
    """
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"unknown sweep parameter '{param}' (expected one of {', '.join(SWEEP_PARAMS)})")
    if param == 'resample':
        if times < 1:
            raise ValidationError(f"--times must be >= 1, got {times}")
        return [SweepPoint(f"resample={i}", config, config.seed + i) for i in range(times)]
    if not values:
        raise ValidationError(f"--param {param} needs --values")
    points = []
    for value in parse_value_list(values):
        if param == 'k':
            if value != int(value):
                raise ValidationError(f"k values must be integers, got {value}")
            changed = config.replace(k=int(value))
        elif param == 'lambda':
            changed = config.replace(lambda_=float(value))
        else:
            changed = config.replace(**{param: float(value)})
        points.append(SweepPoint(f"{param}={value}", changed, config.seed))
    return points


def sweep_candidate_sets(samples: Sequence[MESample], points: Sequence[SweepPoint], source: Optional[FlowSource],
                         fuse_mode: str = DEFAULT_FUSE_MODE, jobs: int = 1) -> List[CandidateSet]:
    """One candidate set per point; points sharing K and occurring seed share inputs."""
    built: Dict[Tuple[int, int], CandidateSet] = {}
    sets = []
    for point in points:
        key = (point.config.k, point.occurring_seed)
        if key not in built:
            built[key] = build_structure_set(samples, '3o', point.config.k, point.occurring_seed,
                                             point.config.flow_scale, source, fuse_mode, jobs)
        sets.append(built[key])
    return sets


def comparison_table(rows: Sequence[Tuple[str, EvaluationResult]], title: str = '') -> str:
    """One line per run: accuracy, F1, UF1, UAR and the mean score gap."""
    width = max([len(label) for label, _ in rows] + [8])
    lines = []
    if title:
        lines += [title, '=' * len(title)]
    lines.append(f"{'run':<{width}}  accuracy      f1     uf1     uar     gap")
    for label, result in rows:
        r = result.report
        lines.append(f"{label:<{width}}  {r.accuracy:8.2f}  {r.f1_macro:6.4f}  {r.uf1:6.4f}  "
                     f"{r.uar:6.4f}  {result.gap_mean:6.4f}")
    accuracies = [result.report.accuracy for _, result in rows]
    if len(accuracies) > 1:
        lines.append('')
        lines.append(f"accuracy mean {np.mean(accuracies):.2f}  std {np.std(accuracies):.2f}")
    return '\n'.join(lines)


def comparison_rows(rows: Sequence[Tuple[str, EvaluationResult]]) -> List[Dict[str, Any]]:
    return [{'run': label, 'out_dir': str(result.out_dir), 'gap_mean': result.gap_mean,
             'gap_ge_delta': result.gap_ge_delta, **_headline(result.report)} for label, result in rows]


def _headline(report: MetricsReport) -> Dict[str, Any]:
    return {'accuracy': report.accuracy, 'f1': report.f1_macro, 'uf1': report.uf1, 'uar': report.uar,
            'n_samples': report.n_samples}


def options_dict(options: TrainOptions) -> Dict[str, Any]:
    data = asdict(options)
    data.pop('log_path', None)
    data.pop('tag', None)
    return data
