"""
fluctlab - ladder processes of marked spectrally positive Levy paths

Computes Laplace exponents, scale functions and ladder measures of a
registered family, simulates marked paths and their ladders, and checks
that the rescaled ladders converge to the limit subordinator.
"""

__version__ = "0.4.0"

import sys
from typing import List, Optional

from config import build_config, parse_arguments, stages_for
from fluct_core.constants import ExitCode
from fluct_core.exceptions import FluctLabError, NumericFailureError, UsageError
from logging_setup import setup_logging
from reports import emit_outputs, run_experiment

# Replicates per index below which a run is exploratory only
ACCEPTANCE_MIN_PATHS = 1000


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_arguments(argv)
    try:
        config = build_config(args)
    except UsageError as e:
        sys.stderr.write(f"fluctlab: {e}\n")
        return int(ExitCode.USAGE)

    logger, stop_logging = setup_logging(
        log_level=args.log_level,
        log_file_name=args.log_file_name,
        log_dir=config.output_dir,
        version=__version__,
        script_name="fluctlab",
        run_label=f"{config.preset}:{config.seed_base}",
    )
    try:
        stages = stages_for(args.subcommand)

        # Log the configuration for confirmation
        logger.info(f"---> Configuration:")
        logger.info(f"     Subcommand: {args.subcommand} (stages: {', '.join(s.value for s in stages)})")
        logger.info(f"     Preset: {config.preset}"
                    + (f" (assumption {config.assumption.kind})" if config.assumption else ""))
        logger.info(f"     n grid: {config.n_grid}, paths per n: {config.paths_per_n}")
        logger.info(f"     Horizon: {config.horizon:g}, local time target: {config.local_time_target:g}")
        logger.info(f"     Seed base: {config.seed_base} ({hex(config.seed_base)})")
        logger.info(f"     Tolerance overrides: {config.tolerances or 'none'}")
        logger.info(f"     Output: {config.output_dir} ({','.join(config.formats)})")
        logger.info(f"     Log level: {args.log_level}, file: {args.log_file_name}")
        logger.info(f"<--- End configuration")
        if config.paths_per_n < ACCEPTANCE_MIN_PATHS:
            logger.warning(f"sys.init: {config.paths_per_n} paths per n is below {ACCEPTANCE_MIN_PATHS}; "
                           f"verdicts are exploratory")

        _startup_header = "========== fluctlab start =========="
        _startup_detail = (
            f"version={__version__}  subcommand={args.subcommand}  preset={config.preset}"
            f"  n_grid={','.join(map(str, config.n_grid))}  paths={config.paths_per_n}  seed={config.seed_base}"
        )
        print(_startup_header)
        print(_startup_detail)
        logger.debug(_startup_header)
        logger.debug(_startup_detail)

        try:
            bundle = run_experiment(config, stages, version=__version__, resume=not args.fresh)
        except NumericFailureError as e:
            logger.error(f"sys.fail: {type(e).__name__}: {e}")
            return int(ExitCode.NUMERIC_FAILURE)
        except UsageError as e:
            logger.error(f"sys.fail: {type(e).__name__}: {e}")
            return int(ExitCode.USAGE)
        except FluctLabError as e:
            logger.error(f"sys.fail: {type(e).__name__}: {e}")
            return int(ExitCode.VERDICT_FAIL)

        try:
            written = emit_outputs(bundle, config.output_dir, config.formats)
        except OSError as e:
            logger.error(f"emit.write: cannot write outputs to {config.output_dir}: {e}")
            return int(ExitCode.VERDICT_FAIL)

        print(f"verdict={bundle.verdict}  files={len(written)}  out={config.output_dir}")
        logger.info(f"sys.exit: verdict={bundle.verdict} exit_code={bundle.exit_code}")
        return bundle.exit_code
    finally:
        logger.debug("sys.shutdown: stopping log listener")
        stop_logging()


if __name__ == "__main__":
    sys.exit(main())
