"""
Configuration and Argument Parsing for the fluctuation lab.

Handles CLI argument parsing, JSON config files and validation of the
resolved experiment configuration. Precedence: defaults < config file < flags.
"""

import argparse
import json
import os
import sys
from typing import Dict, List, Literal, Optional

import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from fluct_core.constants import DEFAULT_TOLERANCES, SUBCOMMAND_STAGES, THREADS_ENV_VAR, Stage, Tolerances
from fluct_core.exceptions import UnsupportedFamilyError, UsageError
from fluct_core.presets import Preset, get_preset, registered_presets
from fluct_core.seeds import MASK64

OUTPUT_FORMATS = ("csv", "json")


def _print_usage():
    """Print grouped CLI help."""
    # Read version without importing fluctlab (avoids pulling in the whole pipeline)
    __version__ = "unknown"
    try:
        version_file = os.path.join(os.path.dirname(__file__), "fluctlab.py")
        with open(version_file) as f:
            for line in f:
                if line.startswith("__version__"):
                    __version__ = line.split('"')[1]
                    break
    except OSError:
        pass

    sys.stderr.write(f"fluctlab v{__version__} - ladder processes of marked Levy paths\n")
    sys.stderr.write(f"""
USAGE
  fluctlab.py SUBCOMMAND [flags]

SUBCOMMANDS
  calc                   Analytic tables and characteristic convergence only
  simulate               calc + dumps of the first simulated paths
  ladder                 calc + dumps of the ladders of those paths
  verify                 calc + fixed-n identity checks and walk checks
  converge               calc + tracked marginals and trends over the n grid
  all                    Everything above

EXPERIMENT
  --config PATH          JSON experiment config (flags override its fields)
  --preset ID            Registered preset (default "crit-exp-B1-theta2")
                         registered: {", ".join(registered_presets())}
  --n-grid N,N,...       Scaling indices (default "4,16,64")
  --paths N              Replicates per index (default 2000)
  --seed U64             Seed base, decimal or 0x-hex (default 20240601)

OUTPUT
  --out DIR              Output directory (default "fluctlab_out")
  --format csv,json      Output formats (default "csv,json")
  --threads N            Worker threads (default: ${THREADS_ENV_VAR} or CPU count)
  --fresh                Ignore per-index checkpoints from earlier runs

LOGGING
  --log-level LEVEL      DEBUG, INFO, or NONE (default "INFO")
  --log-file NAME        Log file name inside the output directory (default "fluctlab.log")
""")


# ==============================================================================
# 1) FLAG VALIDATORS
# ==============================================================================

def validate_n_grid(value: str) -> List[int]:
    """
    Validate and parse the scaling grid.

    Args:
        value: Comma-separated positive integers, optionally in brackets

    Returns:
        Sorted list of distinct integers

    Raises:
        argparse.ArgumentTypeError: If validation fails
    """
    try:
        parsed = sorted(set(map(int, value.strip("[]").split(","))))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Invalid format for n grid: {e}")
    if not parsed or parsed[0] < 1:
        raise argparse.ArgumentTypeError("n grid values must be positive integers.")
    return parsed


def validate_seed(value: str) -> int:
    """Parse a 64-bit unsigned seed given in decimal or 0x-hex."""
    try:
        seed = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Seed must be an integer, got {value!r}.")
    if not 0 <= seed <= MASK64:
        raise argparse.ArgumentTypeError("Seed must be an unsigned 64-bit integer.")
    return seed


def validate_formats(value: str) -> List[str]:
    parsed = [v.strip().lower() for v in value.split(",") if v.strip()]
    unknown = [v for v in parsed if v not in OUTPUT_FORMATS]
    if not parsed or unknown:
        raise argparse.ArgumentTypeError(f"Formats must be a subset of {','.join(OUTPUT_FORMATS)}.")
    return sorted(set(parsed), key=OUTPUT_FORMATS.index)


def validate_positive_int(value: str) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a positive integer, got {value!r}.")
    if parsed < 1:
        raise argparse.ArgumentTypeError(f"Expected a positive integer, got {parsed}.")
    return parsed


# ==============================================================================
# 2) EXPERIMENT CONFIG
# ==============================================================================

class AssumptionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["B1", "B2"]
    theta: Optional[float] = Field(default=None, ge=0)  # B1
    kappa: Optional[float] = Field(default=None, ge=0)  # B2


class ExperimentConfig(BaseModel):
    """Validated experiment configuration; every field has a default."""
    model_config = ConfigDict(extra="forbid")

    preset: str = "crit-exp-B1-theta2"
    assumption: Optional[AssumptionConfig] = None
    n_grid: List[int] = Field(default_factory=lambda: [4, 16, 64])
    paths_per_n: int = Field(default=2000, ge=1)
    horizon: float = Field(default=400.0, gt=0)
    local_time_target: float = Field(default=1.0, gt=0)
    seed_base: int = Field(default=20240601, ge=0, le=MASK64)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    output_dir: str = "fluctlab_out"
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    threads: Optional[int] = Field(default=None, ge=1)
    walk_replicates: int = Field(default=2000, ge=2)
    walk_steps_factor: int = Field(default=4, ge=1)   # grid walk steps per unit time = factor * n
    limit_draws: int = Field(default=100_000, ge=2)
    dump_paths: int = Field(default=3, ge=0)

    @field_validator("preset")
    @classmethod
    def _registered_preset(cls, value: str) -> str:
        if value not in registered_presets():
            raise ValueError(f"unknown preset {value!r} (registered: {', '.join(registered_presets())})")
        return value

    @field_validator("n_grid")
    @classmethod
    def _positive_grid(cls, value: List[int]) -> List[int]:
        if not value or min(value) < 1:
            raise ValueError("n_grid must be a nonempty list of positive integers")
        return sorted(set(value))

    @field_validator("tolerances")
    @classmethod
    def _known_tolerances(cls, value: Dict[str, float]) -> Dict[str, float]:
        try:
            DEFAULT_TOLERANCES.with_overrides(value)
        except UsageError as e:
            raise ValueError(str(e)) from None
        return value

    def tolerance_set(self) -> Tolerances:
        return DEFAULT_TOLERANCES.with_overrides(self.tolerances)

    def resolved_preset(self) -> Preset:
        """Registered preset with the configured assumption applied."""
        preset = get_preset(self.preset)
        if self.assumption is not None:
            preset = preset.with_assumption(self.assumption.kind, self.assumption.theta, self.assumption.kappa)
        return preset

    def fingerprint_fields(self) -> dict:
        """Fields that determine results (output location and threading excluded)."""
        return self.model_dump(exclude={"output_dir", "formats", "threads"}, mode="json")


def load_config_file(path: str) -> dict:
    """
    Read a JSON config file.

    Raises:
        UsageError: If the file cannot be read or is not a JSON object
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Args:
        argv: Argument list (default: sys.argv[1:])

    Returns:
        Parsed arguments namespace; unset experiment flags are None
    """
    parser = argparse.ArgumentParser(
        description="fluctlab - ladder processes of marked Levy paths.",
        add_help=False,
    )
    parser.add_argument("-h", "--help", action="store_true", default=False, help=argparse.SUPPRESS)
    parser.add_argument("subcommand", nargs="?", choices=sorted(SUBCOMMAND_STAGES), default=None)

    parser.add_argument("--config", type=str, default=None, help="JSON experiment config file.")
    parser.add_argument("--preset", type=str, default=None, help="Registered preset id.")
    parser.add_argument("--n-grid", dest="n_grid", type=validate_n_grid, default=None,
                        help="Comma-separated scaling indices.")
    parser.add_argument("--paths", dest="paths_per_n", type=validate_positive_int, default=None,
                        help="Replicates per index.")
    parser.add_argument("--seed", dest="seed_base", type=validate_seed, default=None,
                        help="Seed base (64-bit).")
    parser.add_argument("--out", dest="output_dir", type=str, default=None, help="Output directory.")
    parser.add_argument("--format", dest="formats", type=validate_formats, default=None,
                        help="Output formats, subset of csv,json.")
    parser.add_argument("--threads", type=validate_positive_int, default=None, help="Worker threads.")
    parser.add_argument("--fresh", action="store_true", default=False,
                        help="Ignore checkpoints of earlier runs.")

    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "NONE"], default="INFO",
                        help="Set logging level. Default is INFO.")
    parser.add_argument("--log-file", dest="log_file_name", type=str, default="fluctlab.log",
                        help="Name of the log file. Default is 'fluctlab.log'.")

    args = parser.parse_args(argv)

    # Custom help output
    if args.help or args.subcommand is None:
        _print_usage()
        sys.exit(0 if args.help else 2)
    return args


FLAG_FIELDS = ("preset", "n_grid", "paths_per_n", "seed_base", "output_dir", "formats", "threads")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Resolve defaults < config file < flags into a validated config.

    Raises:
        UsageError: On an unreadable file or invalid values (registered presets listed)
    """
    data = load_config_file(args.config) if args.config else {}
    for name in FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(map(str, err['loc']))}: {err['msg']}" for err in e.errors())
        if any(err["loc"] == ("preset",) for err in e.errors()):
            raise UnsupportedFamilyError(f"invalid configuration: {problems}") from None
        raise UsageError(f"invalid configuration: {problems}") from None


def stages_for(subcommand: str) -> tuple:
    return SUBCOMMAND_STAGES[subcommand]


def resolve_threads(requested: Optional[int], work_items: int) -> int:
    """
    Effective worker count: min(flag or FLUCTLAB_THREADS, CPU count, work items).

    Raises:
        UsageError: If FLUCTLAB_THREADS is not a positive integer
    """
    cap = requested
    if cap is None and os.environ.get(THREADS_ENV_VAR):
        try:
            cap = int(os.environ[THREADS_ENV_VAR])
        except ValueError:
            raise UsageError(f"{THREADS_ENV_VAR} must be a positive integer") from None
        if cap < 1:
            raise UsageError(f"{THREADS_ENV_VAR} must be a positive integer")
    cpus = psutil.cpu_count(logical=True) or 1
    return max(1, min(cap if cap is not None else cpus, cpus, max(1, work_items)))


__all__ = [
    "AssumptionConfig", "ExperimentConfig", "Stage", "build_config", "load_config_file", "parse_arguments",
    "resolve_threads", "stages_for", "validate_formats", "validate_n_grid", "validate_positive_int",
    "validate_seed",
]
