"""
Train Module - train one model on a list of samples

Inputs come from a flow cache (--cache) or are computed from the frames.
Writes ``model.pt``, ``train_log.jsonl``, ``metrics.json`` and
``run_record.json`` under --out. With --eval-split the held-out samples
are scored and their MetricsReport becomes the metrics document.
"""

import argparse
import dataclasses
import time
from pathlib import Path
from typing import List, Optional

from core.base_module import BaseModule
from shared.arguments import add_flow_arguments, add_training_arguments, training_options
from shared.experiments import (
    cached_candidate_set, filter_ids, load_dataset, make_flow_source, options_dict, refs_from_rows,
    single_label_space
)
from shared.ingest import load_manifest, resolve_label_spaces
from shared.metrics import confusion, format_table, metrics_report
from shared.model import save_checkpoint
from shared.records import (
    METRICS_FILENAME, REPORT_FILENAME, RUN_RECORD_FILENAME, TRAIN_LOG_FILENAME, RunRecord, save_json
)
from shared.structures import build_structure_set
from shared.training import evaluate, train_model
from shared.utils import read_id_list

CHECKPOINT_FILENAME = 'model.pt'


class TrainModule(BaseModule):
    """Train a model on a split of a dataset"""

    def get_name(self) -> str:
        return "train"

    def get_help(self) -> str:
        return "train one model on a sample list"

    def get_order(self) -> int:
        return 30

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifest', type=Path, required=True, help="dataset manifest (CSV)")
        parser.add_argument('--cache', type=Path, default=None, help="flow cache built by prepare")
        parser.add_argument('--split', type=Path, default=None,
                            help="file listing training sample ids (default: every sample)")
        parser.add_argument('--eval-split', type=Path, default=None,
                            help="file listing held-out sample ids to score after training")
        add_flow_arguments(parser)
        add_training_arguments(parser)

    def _candidate_set(self, args: argparse.Namespace, wanted: Optional[List[str]]) -> tuple:
        ctx = self.app_context
        config = ctx.config
        if args.cache is not None:
            rows = load_manifest(args.manifest)
            spaces = resolve_label_spaces(rows)
            data = cached_candidate_set(args.cache, refs_from_rows(filter_ids(rows, wanted), spaces), config,
                                        args.fuse_mode)
        else:
            samples, spaces = load_dataset(args.manifest, config.image_size, ctx.jobs)
            source = make_flow_source(args.flow, args.import_dir)
            data = build_structure_set(filter_ids(samples, wanted), '3o', config.k, config.seed,
                                       config.flow_scale, source, args.fuse_mode, ctx.jobs)
        return data, single_label_space(spaces)

    def run(self, args: argparse.Namespace) -> int:
        started = time.perf_counter()
        ctx = self.app_context
        config = ctx.config
        train_ids = read_id_list(args.split) if args.split else None
        eval_ids = read_id_list(args.eval_split) if args.eval_split else []
        wanted = None if train_ids is None else list(dict.fromkeys(train_ids + eval_ids))
        data, label_space = self._candidate_set(args, wanted)
        train_set = data if train_ids is None else data.subset(list(dict.fromkeys(train_ids)))

        out_dir = ctx.ensure_out_dir()
        options = dataclasses.replace(training_options(args), tag='train', log_path=out_dir / TRAIN_LOG_FILENAME)
        self.log_message(f"train: {len(train_set)} samples, K={train_set.k}, {config.epochs} epochs")
        result = train_model(train_set, config, label_space.C, options)
        checkpoint = save_checkpoint(out_dir / CHECKPOINT_FILENAME, result.model, train_set.k,
                                     {'labels': list(label_space.names), 'config': config.snapshot()})

        metrics = {
            'train_accuracy': result.train_accuracy,
            'gap_mean': result.gap_mean,
            'gap_ge_delta': result.gap_ge_delta,
        }
        if args.eval_split:
            eval_set = data.subset(list(dict.fromkeys(eval_ids)))
            evaluation = evaluate(result.model, eval_set, config.batch_size)
            report = metrics_report(confusion(evaluation.predictions, eval_set.labels, label_space.C),
                                    label_space.names)
            metrics.update(report.to_dict())
            (out_dir / REPORT_FILENAME).write_text(
                format_table(report, f"train: held-out {len(eval_set)} samples") + '\n', encoding='utf-8')
        metrics_path = save_json(out_dir / METRICS_FILENAME, metrics)

        RunRecord(
            command='train',
            config=config.snapshot(),
            epochs=[vars(e) for e in result.epochs],
            checkpoint=str(checkpoint),
            metrics_path=str(metrics_path),
            wall_clock=time.perf_counter() - started,
            extra={'samples': len(train_set), 'options': options_dict(options)},
        ).save(out_dir / RUN_RECORD_FILENAME)
        self.log_message(f"train: train accuracy {result.train_accuracy:.2f}%, "
                         f"mean gap {result.gap_mean:.4f} -> {checkpoint}")
        return 0
