"""
CDE Module - composite database evaluation

Several databases are relabelled into the shared Positive / Negative /
Surprise classes through a mapping file, then evaluated leave-one-subject-
out over the union of their subjects. Several --configs produce one
composite report each plus a comparison table.
"""

import argparse
from pathlib import Path
from typing import Dict, List, Tuple

from core.base_module import BaseModule
from core.config import Config, load_config
from core.types import LabelSpace, MESample
from shared.arguments import add_flow_arguments, add_training_arguments, training_options
from shared.experiments import (
    EvaluationResult, comparison_rows, comparison_table, evaluate_loso, load_dataset, make_flow_source,
    options_dict
)
from shared.metrics import format_table
from shared.protocol import load_mapping, make_cde
from shared.records import save_json
from shared.structures import build_structure_set
from shared.utils import sanitize_filename

COMPARISON_FILENAME = 'comparison.txt'


class CdeModule(BaseModule):
    """Composite database evaluation"""

    def get_name(self) -> str:
        return "cde"

    def get_help(self) -> str:
        return "composite database evaluation over several manifests"

    def get_order(self) -> int:
        return 50

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifests', type=Path, nargs='+', required=True,
                            help="one manifest per source database")
        parser.add_argument('--configs', type=Path, nargs='*', default=[],
                            help="config files evaluated one after another (default: --config)")
        parser.add_argument('--mapping', type=Path, default=None,
                            help="class mapping file (default: configs/cde_mapping.txt)")
        add_flow_arguments(parser)
        add_training_arguments(parser)

    def _configs(self, args: argparse.Namespace) -> List[Tuple[str, Config]]:
        if not args.configs:
            name = args.config.stem if args.config else 'default'
            return [(name, self.app_context.config)]
        return [(path.stem, load_config(path, seed=args.seed, k=args.k)) for path in args.configs]

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        mapping = load_mapping(args.mapping)
        options = training_options(args)
        source = make_flow_source(args.flow, args.import_dir)
        configs = self._configs(args)
        loaded: Dict[int, Tuple[List[List[MESample]], Dict[str, LabelSpace]]] = {}
        results: List[Tuple[str, EvaluationResult]] = []

        for name, config in configs:
            if config.image_size not in loaded:
                datasets, spaces = [], {}
                for manifest in args.manifests:
                    samples, dataset_spaces = load_dataset(manifest, config.image_size, ctx.jobs)
                    datasets.append(samples)
                    spaces.update(dataset_spaces)
                loaded[config.image_size] = (datasets, spaces)
            datasets, spaces = loaded[config.image_size]
            composite = make_cde(datasets, mapping, spaces)
            self.log_message(f"cde: {len(composite.items)} samples from {len(composite.subjects)} subjects "
                             f"({composite.dropped} dropped by the mapping)")
            data = build_structure_set(composite.items, '3o', config.k, config.seed, config.flow_scale,
                                       source, args.fuse_mode, ctx.jobs)
            out_dir = ctx.out_dir if len(configs) == 1 else ctx.out_dir / sanitize_filename(name)
            result = evaluate_loso(
                data, config, composite.label_space, out_dir,
                command='cde',
                options=options,
                jobs=ctx.jobs,
                run_index=ctx.run_index,
                plan=composite.plan,
                extra={
                    'manifests': ','.join(str(m) for m in args.manifests),
                    'mapping': str(args.mapping) if args.mapping else 'default',
                    'dropped': composite.dropped,
                    **options_dict(options),
                },
                title=f"CDE {name}: {len(composite.subjects)} subjects",
            )
            print(format_table(result.report, f"CDE {name}"))
            results.append((name, result))

        if len(results) > 1:
            table = comparison_table(results, "CDE comparison")
            (ctx.ensure_out_dir() / COMPARISON_FILENAME).write_text(table + '\n', encoding='utf-8')
            save_json(ctx.out_dir / 'comparison.json', comparison_rows(results))
            print(table)
        return 0
