"""Command-line entry point for the uncertainty pipeline."""
import argparse
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from .config import Config
from .debug_logger import configure_logging
from .graph import COMMANDS, run_pipeline

COMMAND_HELP = {
    "metafeatures": "Compute fold-aware meta-features of every target instance",
    "synth": "Generate the synthetic complexity grid from knowledge-base sources",
    "kb": "Build the meta-knowledge base",
    "train": "Nested cross-validated training of the uncertainty estimator",
    "estimate": "Apply the fitted estimator to the meta-feature tables",
    "eval": "Odds ratios, correlations and detection metrics per run",
    "abstain": "Abstention curves per run",
    "explain": "Shapley explanations of the most uncertain instances",
    "report": "Summarize the evaluated runs",
    "sweep": "Detection metrics under every knowledge-base sampling policy",
    "run": "Run every stage in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='meta-uncertainty',
        description='Per-instance misclassification uncertainty from instance-hardness meta-heuristics'
    )

    parser.add_argument(
        '--config',
        default='config/config.yaml',
        help='Path to configuration file (default: config/config.yaml)'
    )

    parser.add_argument(
        '--seed',
        type=int,
        help='Root seed (overrides the configuration)'
    )

    parser.add_argument(
        '--threads',
        type=int,
        help='Parallel workers per stage (default: available cores)'
    )

    parser.add_argument(
        '--out-dir',
        help='Directory for every artifact (overrides paths.out_dir)'
    )

    parser.add_argument(
        '--verbose',
        '-v',
        action='store_true',
        help='Enable verbose output showing detailed stage information'
    )

    parser.add_argument(
        '--debug',
        '-d',
        action='store_true',
        help='Enable debug mode with detailed logging and intermediate file saves'
    )

    parser.add_argument(
        '--debug-config',
        default='config/debug.yaml',
        help='Path to debug configuration file (default: config/debug.yaml)'
    )

    subparsers = parser.add_subparsers(dest='command', required=True, metavar='command')
    for name in COMMANDS:
        subparsers.add_parser(name, help=COMMAND_HELP[name])

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main function. Returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        overrides = {'seed': args.seed, 'threads': args.threads, 'paths.out_dir': args.out_dir}
        if args.debug and Path(args.debug_config).exists():
            config = Config(args.debug_config, overrides)
            print(f"Debug mode enabled - using {args.debug_config}")
        else:
            config = Config(args.config, overrides)

        logging_settings = config.run.logging
        configure_logging(logging_settings.level, logging_settings.format)

        verbose = args.verbose or args.debug
        if verbose:
            print("\n" + "=" * 80)
            print(("DEBUG" if args.debug else "VERBOSE") + " MODE ENABLED - Detailed stage tracking")
            print("=" * 80 + "\n")

        final_state = run_pipeline(config, command=args.command, verbose=verbose, debug=args.debug)

        print("\n" + "=" * 80)
        print(f"{args.command.upper()} COMPLETE" if final_state.get('workflow_status') != 'error' else f"{args.command.upper()} FAILED")
        print("=" * 80)

        debug_logger = final_state.get('_debug_logger')
        if debug_logger:
            debug_logger.summary()

        if final_state.get('workflow_status') == 'error':
            print(f"\n{final_state.get('error_message', 'Unknown error')}")
            return int(final_state.get('exit_code') or 1)

        if final_state.get('final_report'):
            print("\n" + final_state['final_report'])
        print(f"Artifacts written to: {config.out_dir}")
        return 0

    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return 130
    except Exception as e:
        print(f"\nFatal error: {str(e)}")
        if args.debug:
            print("\nFull traceback:")
            traceback.print_exc()
        return getattr(e, 'exit_code', 1)


if __name__ == '__main__':
    sys.exit(main())
