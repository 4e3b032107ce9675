"""
LOSO Module - leave-one-subject-out evaluation of one dataset

Every subject is held out once; predictions of all folds are pooled into
one MetricsReport. Folds finished by an earlier, interrupted run with the
same config and --out are reused.
"""

import argparse
from pathlib import Path

from core.base_module import BaseModule
from shared.arguments import add_flow_arguments, add_training_arguments, training_options
from shared.experiments import (
    cached_candidate_set, evaluate_loso, load_dataset, make_flow_source, options_dict, refs_from_rows,
    single_label_space
)
from shared.ingest import load_manifest, resolve_label_spaces
from shared.metrics import format_table
from shared.structures import build_structure_set


class LosoModule(BaseModule):
    """Leave-one-subject-out evaluation"""

    def get_name(self) -> str:
        return "loso"

    def get_help(self) -> str:
        return "leave-one-subject-out evaluation of a dataset"

    def get_order(self) -> int:
        return 40

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifest', type=Path, required=True, help="dataset manifest (CSV)")
        parser.add_argument('--cache', type=Path, default=None,
                            help="flow cache built by prepare (default: compute flows from the frames)")
        parser.add_argument('--keep-checkpoints', action='store_true', help="save each fold's model")
        parser.add_argument('--no-resume', action='store_true', help="retrain folds finished by an earlier run")
        add_flow_arguments(parser)
        add_training_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        config = ctx.config
        if args.cache is not None:
            rows = load_manifest(args.manifest)
            spaces = resolve_label_spaces(rows)
            data = cached_candidate_set(args.cache, refs_from_rows(rows, spaces), config, args.fuse_mode)
            flow = f"cache:{args.cache}"
        else:
            samples, spaces = load_dataset(args.manifest, config.image_size, ctx.jobs)
            source = make_flow_source(args.flow, args.import_dir)
            data = build_structure_set(samples, '3o', config.k, config.seed, config.flow_scale,
                                       source, args.fuse_mode, ctx.jobs)
            flow = f"{args.flow}:{args.fuse_mode}"
        label_space = single_label_space(spaces)
        options = training_options(args)

        self.log_message(f"loso: {len(data)} samples, {len(set(data.subject_ids))} subjects, K={data.k}")
        result = evaluate_loso(
            data, config, label_space, ctx.out_dir,
            command='loso',
            options=options,
            jobs=ctx.jobs,
            run_index=ctx.run_index,
            resume=not args.no_resume,
            keep_checkpoints=args.keep_checkpoints,
            extra={'manifest': str(args.manifest), 'flow': flow, **options_dict(options)},
        )
        print(format_table(result.report, f"LOSO {args.manifest.name}"))
        return 0
