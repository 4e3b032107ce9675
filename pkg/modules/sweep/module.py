"""
Sweep Module - one-parameter grid sweeps

--param k|delta|gamma|lambda takes --values (``4..16:2`` or ``0.4,0.5``);
--param resample repeats the run --times times with different
occurring-frame draws and an unchanged training seed. Each point is a full
LOSO run under ``<out>/<param>=<value>/``; the table of all points goes to
``sweep.txt`` and ``sweep.json``.
"""

import argparse
from pathlib import Path

from core.base_module import BaseModule
from shared.arguments import add_flow_arguments, add_training_arguments, training_options
from shared.experiments import (
    SWEEP_PARAMS, comparison_rows, comparison_table, evaluate_loso, load_dataset, make_flow_source,
    options_dict, single_label_space, sweep_candidate_sets, sweep_points
)
from shared.records import save_json
from shared.utils import sanitize_filename

SWEEP_TABLE_FILENAME = 'sweep.txt'
SWEEP_JSON_FILENAME = 'sweep.json'


class SweepModule(BaseModule):
    """Grid sweeps over one hyperparameter"""

    def get_name(self) -> str:
        return "sweep"

    def get_help(self) -> str:
        return "LOSO runs over a grid of one parameter"

    def get_order(self) -> int:
        return 60

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifest', type=Path, required=True, help="dataset manifest (CSV)")
        parser.add_argument('--param', choices=SWEEP_PARAMS, required=True)
        parser.add_argument('--values', default=None, help="start..stop:step range or comma list")
        parser.add_argument('--times', type=int, default=5, help="repetitions for --param resample (default: 5)")
        add_flow_arguments(parser)
        add_training_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        points = sweep_points(ctx.config, args.param, args.values, args.times)
        samples, spaces = load_dataset(args.manifest, ctx.config.image_size, ctx.jobs)
        label_space = single_label_space(spaces)
        for point in points:
            for sample in samples:
                sample.check_length(point.config.k)
        options = training_options(args)
        source = make_flow_source(args.flow, args.import_dir)
        data_sets = sweep_candidate_sets(samples, points, source, args.fuse_mode, ctx.jobs)

        results = []
        for i, (point, data) in enumerate(zip(points, data_sets), 1):
            self.log_message(f"sweep: point {i}/{len(points)}: {point.label}")
            result = evaluate_loso(
                data, point.config, label_space, ctx.out_dir / sanitize_filename(point.label),
                command='sweep',
                options=options,
                jobs=ctx.jobs,
                run_index=ctx.run_index,
                extra={
                    'manifest': str(args.manifest),
                    'param': args.param,
                    'point': point.label,
                    'occurring_seed': point.occurring_seed,
                    **options_dict(options),
                },
                title=f"sweep {point.label}",
            )
            results.append((point.label, result))

        table = comparison_table(results, f"sweep over {args.param}")
        (ctx.ensure_out_dir() / SWEEP_TABLE_FILENAME).write_text(table + '\n', encoding='utf-8')
        save_json(ctx.out_dir / SWEEP_JSON_FILENAME, comparison_rows(results))
        print(table)
        return 0
