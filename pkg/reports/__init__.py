"""Experiment runner and output writers for the fluctuation lab."""
from .runner import ReportBundle, StageError, StageReport, run_experiment
from .emit import emit_outputs, summary_payload

__all__ = ['ReportBundle', 'StageError', 'StageReport', 'run_experiment', 'emit_outputs', 'summary_payload']
