#!/usr/bin/env python3
"""
OccurRank - micro-expression recognition from ranked occurring-frame candidates

Command-line entry point using the modular plugin architecture: every
subcommand is a module discovered under modules/ (plus an optional plugins
directory named by OCCURRANK_PLUGINS).

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from core._version import __version__
from core.app_context import AppContext
from core.config import load_config
from core.errors import ValidationError
from core.module_loader import ModuleLoader

logger = logging.getLogger('occurrank')

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

LOG_FORMAT = '%(asctime)s %(levelname)-7s %(message)s'


def _get_plugins_dir() -> Optional[Path]:
    plugins = os.getenv('OCCURRANK_PLUGINS')
    return Path(plugins).expanduser() if plugins else None


def _global_arguments() -> argparse.ArgumentParser:
    """Flags every subcommand accepts."""
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group('global options')
    group.add_argument('--config', type=Path, default=None, help="key=value config file")
    group.add_argument('--seed', type=int, default=None, help="override the config seed")
    group.add_argument('--k', type=int, default=None, help="override the config segment count K")
    group.add_argument('--out', type=Path, default=Path('out'), help="output directory (default: ./out)")
    group.add_argument('--jobs', type=int, default=1, help="parallel workers (default: 1)")
    group.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    group.add_argument('-q', '--quiet', action='store_true', help="warnings and errors only")
    return common


def build_parser(modules) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='occurrank',
        description="Micro-expression recognition with ranked occurring-frame candidates.",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    common = _global_arguments()
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    for module in modules:
        sub = subparsers.add_parser(module.get_name(), parents=[common], help=module.get_help(),
                                    description=module.get_help())
        module.add_arguments(sub)
    return parser


def _configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    _configure_logging()
    modules_dir = Path(__file__).resolve().parent / 'modules'
    loader = ModuleLoader(modules_dir, plugins_dir=_get_plugins_dir())
    modules = loader.load_all_modules()
    if not modules:
        logger.error("No modules were loaded. Check the modules/ directory.")
        return EXIT_RUNTIME

    parser = build_parser(modules)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; those are validation failures here
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION
    _configure_logging(args.verbose, args.quiet)

    module = loader.get_module(args.command)
    try:
        if args.jobs < 1:
            raise ValidationError(f"--jobs must be >= 1, got {args.jobs}")
        config = load_config(args.config, seed=args.seed, k=args.k)
        app_context = AppContext(config, args.out, jobs=args.jobs, config_path=args.config)
        module.initialize(app_context)
        return module.run(args)
    except ValidationError as e:
        logger.error("%s: %s", args.command, e)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        logger.error("%s: interrupted", args.command)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("%s: %s", args.command, e)
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    finally:
        loader.unload_all()


if __name__ == '__main__':
    sys.exit(main())
