"""Fluct Core - marked Levy paths, their ladder processes and convergence checks."""
from .constants import DEFAULT_TOLERANCES, Assumption, Criticality, ExitCode, Metric, Stage, Tolerances
from .exceptions import (
    FluctLabError,
    HorizonTooShortError,
    NumericFailureError,
    PrecisionFailureError,
    RefinementNeededError,
    SpecValidationError,
    UnsupportedFamilyError,
    UnsupportedMeasureError,
    UsageError,
)
from .specs import MarkRule, ProcessSpec, ScalingParams
from .measures import LevyMeasureSpec, atomic_measure, exponential_measure
from .presets import Preset, get_preset, registered_presets
from .levy_calculus import (
    LadderMeasure,
    LimitSpec,
    eta_root,
    kill_rate,
    ladder_measure,
    laplace_exponent,
    limit_parameters,
    phi_inverse,
    scale_function,
)
from .path_simulator import MarkedPath, sample_marked_path, sample_marked_path_until
from .ladder_decomposition import LadderProcess, build_ladder, record_decomposition
from .subordinator_sampler import limit_subordinator, sample_marginals, sample_subordinator
from .random_walk_bridge import discretize_path, fristedt_alpha, jump_chain_walk, walk_ladder_exponent
from .convergence_lab import (
    DistanceReport,
    SampleSet,
    convergence_report,
    distribution_distance,
    js_condition_check,
)

__all__ = [
    'DEFAULT_TOLERANCES', 'Assumption', 'Criticality', 'ExitCode', 'Metric', 'Stage', 'Tolerances',
    'FluctLabError', 'HorizonTooShortError', 'NumericFailureError', 'PrecisionFailureError',
    'RefinementNeededError', 'SpecValidationError', 'UnsupportedFamilyError', 'UnsupportedMeasureError',
    'UsageError',
    'MarkRule', 'ProcessSpec', 'ScalingParams',
    'LevyMeasureSpec', 'atomic_measure', 'exponential_measure',
    'Preset', 'get_preset', 'registered_presets',
    'LadderMeasure', 'LimitSpec', 'eta_root', 'kill_rate', 'ladder_measure', 'laplace_exponent',
    'limit_parameters', 'phi_inverse', 'scale_function',
    'MarkedPath', 'sample_marked_path', 'sample_marked_path_until',
    'LadderProcess', 'build_ladder', 'record_decomposition',
    'limit_subordinator', 'sample_marginals', 'sample_subordinator',
    'discretize_path', 'fristedt_alpha', 'jump_chain_walk', 'walk_ladder_exponent',
    'DistanceReport', 'SampleSet', 'convergence_report', 'distribution_distance', 'js_condition_check',
]
