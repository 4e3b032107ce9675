"""
Structures Module - compare the three-frame candidates with reduced inputs

Each --mode is trained and evaluated exactly like ``loso``. For the
candidate modes (1o, 2o, 3o) two extra rows can be requested:
--candidate J trains on candidate J alone (no ranking, no fusion) and
--no-calibration repeats the candidate-set run with lambda = 0.
"""

import argparse
from pathlib import Path

from core.base_module import BaseModule
from core.errors import ValidationError
from shared.arguments import add_flow_arguments, add_training_arguments, training_options
from shared.experiments import (
    comparison_rows, comparison_table, evaluate_loso, load_dataset, make_flow_source, options_dict,
    single_label_space
)
from shared.records import save_json
from shared.structures import APEX_MODES, STRUCTURE_MODES, build_structure_set
from shared.utils import sanitize_filename

STRUCTURES_TABLE_FILENAME = 'structures.txt'
STRUCTURES_JSON_FILENAME = 'structures.json'


class StructuresModule(BaseModule):
    """Structure comparison: 1o / 2o / 3o and apex-based inputs"""

    def get_name(self) -> str:
        return "structures"

    def get_help(self) -> str:
        return "compare candidate structures and apex-based inputs"

    def get_order(self) -> int:
        return 70

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifest', type=Path, required=True, help="dataset manifest (CSV)")
        parser.add_argument('--mode', choices=STRUCTURE_MODES, action='append', dest='modes',
                            help="input structure; repeat to compare several (default: 3o)")
        parser.add_argument('--candidate', type=int, default=None, metavar='J',
                            help="also train on candidate J alone for each candidate mode")
        parser.add_argument('--no-calibration', action='store_true',
                            help="also run each candidate mode with lambda = 0")
        add_flow_arguments(parser)
        add_training_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        config = ctx.config
        modes = list(dict.fromkeys(args.modes or ['3o']))
        if args.candidate is not None and not 1 <= args.candidate <= config.k:
            raise ValidationError(f"--candidate must lie in 1..{config.k}, got {args.candidate}")
        samples, spaces = load_dataset(args.manifest, config.image_size, ctx.jobs)
        label_space = single_label_space(spaces)
        options = training_options(args)
        source = make_flow_source(args.flow, args.import_dir)

        runs = []
        for mode in modes:
            data = build_structure_set(samples, mode, config.k, config.seed, config.flow_scale,
                                       source, args.fuse_mode, ctx.jobs)
            runs.append((mode, data, config))
            if mode in APEX_MODES:
                continue
            if args.no_calibration:
                runs.append((f"{mode} lambda=0", data, config.replace(lambda_=0.0)))
            if args.candidate is not None:
                runs.append((f"{mode} #{args.candidate}", data.select_candidate(args.candidate), config))

        results = []
        for label, data, run_config in runs:
            self.log_message(f"structures: {label} (K={data.k})")
            result = evaluate_loso(
                data, run_config, label_space, ctx.out_dir / sanitize_filename(label),
                command='structures',
                options=options,
                jobs=ctx.jobs,
                run_index=ctx.run_index,
                extra={'manifest': str(args.manifest), 'structure': label, 'inputs_per_sample': data.k,
                       **options_dict(options)},
                title=f"structure {label}",
            )
            results.append((label, result))

        table = comparison_table(results, "structure comparison")
        (ctx.ensure_out_dir() / STRUCTURES_TABLE_FILENAME).write_text(table + '\n', encoding='utf-8')
        save_json(ctx.out_dir / STRUCTURES_JSON_FILENAME, comparison_rows(results))
        print(table)
        return 0
