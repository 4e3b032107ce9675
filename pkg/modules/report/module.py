"""
Report Module - list recorded runs and print metrics documents
"""

import argparse
from pathlib import Path
from typing import Any, Dict, List

from core.base_module import BaseModule
from core.errors import ValidationError
from shared.metrics import MetricsReport, format_table
from shared.records import METRICS_FILENAME, load_json


def format_runs(runs: List[Dict[str, Any]]) -> str:
    """One line per run from the run index."""
    if not runs:
        return "no runs recorded"
    width = max([len(run.get('label') or '') for run in runs] + [5])
    lines = [f"{'run_id':<12}  {'command':<10}  {'status':<7}  {'acc':>6}  {'uf1':>6}  {'uar':>6}  "
             f"{'label':<{width}}  out_dir"]
    for run in runs:
        acc = f"{run['accuracy']:6.2f}" if run['accuracy'] is not None else '     -'
        uf1 = f"{run['uf1']:6.4f}" if run['uf1'] is not None else '     -'
        uar = f"{run['uar']:6.4f}" if run['uar'] is not None else '     -'
        lines.append(f"{run['run_id']:<12}  {run['command']:<10}  {run['status']:<7}  {acc}  {uf1}  {uar}  "
                     f"{run.get('label') or '':<{width}}  {run['out_dir']}")
    return '\n'.join(lines)


class ReportModule(BaseModule):
    """Summaries of finished runs"""

    def get_name(self) -> str:
        return "report"

    def get_help(self) -> str:
        return "list runs under --out or print a metrics document"

    def get_order(self) -> int:
        return 80

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('metrics', type=Path, nargs='*',
                            help="metrics.json files or run directories to print")
        parser.add_argument('--command', dest='filter_command', default=None,
                            help="only list runs of this subcommand")

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        if not args.metrics:
            if not ctx.index_path.exists():
                raise ValidationError(f"no run index at {ctx.index_path}")
            print(format_runs(ctx.run_index.runs(args.filter_command)))
            return 0
        for path in args.metrics:
            if path.is_dir():
                path = path / METRICS_FILENAME
            data = load_json(path)
            if 'confusion' not in data:
                print(path)
                print('\n'.join(f"  {key}: {value}" for key, value in data.items()))
            else:
                print(format_table(MetricsReport.from_dict(data), str(path)))
            print()
        return 0
