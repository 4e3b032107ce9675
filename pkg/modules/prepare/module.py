"""
Prepare Module - candidate draws and fused flow images into a flow cache

--out becomes the cache directory: one ``<sample>/<jj>.l3o`` record per
candidate, ``candidates.csv`` with the occurring-frame draws and
``cache_meta.json`` with the settings that produced them.
"""

import argparse
from pathlib import Path

from core.base_module import BaseModule
from shared.arguments import add_flow_arguments
from shared.experiments import load_dataset, prepare_cache


class PrepareModule(BaseModule):
    """Build the flow cache for a manifest"""

    def get_name(self) -> str:
        return "prepare"

    def get_help(self) -> str:
        return "draw occurring frames and cache fused flow images"

    def get_order(self) -> int:
        return 20

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument('--manifest', type=Path, required=True, help="dataset manifest (CSV)")
        add_flow_arguments(parser)

    def run(self, args: argparse.Namespace) -> int:
        ctx = self.app_context
        samples, _ = load_dataset(args.manifest, ctx.config.image_size, ctx.jobs)
        cache = prepare_cache(samples, ctx.out_dir, ctx.config, args.flow, args.import_dir,
                              args.fuse_mode, ctx.jobs)
        self.log_message(f"prepare: {cache.count()} records ({len(samples)} samples x K={ctx.config.k}) "
                         f"in {cache.root}")
        return 0
