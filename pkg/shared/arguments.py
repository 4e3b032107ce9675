"""
Argument groups reused by several subcommands
"""

import argparse
from pathlib import Path

from core.errors import ValidationError
from shared.experiments import FLOW_SOURCES
from shared.flow import DEFAULT_FUSE_MODE, FUSE_MODES
from shared.training import TrainOptions


def add_flow_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('optical flow')
    group.add_argument('--flow', choices=FLOW_SOURCES, default='reference',
                       help="flow source: built-in estimator or imported fields (default: reference)")
    group.add_argument('--import-dir', type=Path, default=None,
                       help="directory of imported flow fields for --flow import")
    group.add_argument('--fuse-mode', choices=FUSE_MODES, default=DEFAULT_FUSE_MODE,
                       help="average the raw flow vectors, or the two rendered fields (default: vector)")


def add_training_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group('training')
    group.add_argument('--weight-decay', type=float, default=0.0, help="Adam weight decay (default: 0)")
    group.add_argument('--init-weights', type=Path, default=None,
                       help="backbone state_dict loaded before training")
    group.add_argument('--no-augment', action='store_true', help="disable random crop and flip")


def training_options(args: argparse.Namespace) -> TrainOptions:
    if args.weight_decay < 0:
        raise ValidationError(f"--weight-decay must be >= 0, got {args.weight_decay}")
    return TrainOptions(
        weight_decay=args.weight_decay,
        init_weights=str(args.init_weights) if args.init_weights else None,
        augment=not args.no_augment,
    )
