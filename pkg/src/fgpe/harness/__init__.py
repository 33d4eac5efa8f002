"""Scenario files, sweeps, correlation analysis, CSV/SVG output and the ``fgpe`` CLI."""

from fgpe.harness.config import ParseError, ValidationError, load_scenario, parse_scenario, serialize_scenario
from fgpe.harness.report import emit_csv, emit_series_svg, emit_trace_svg, read_csv
from fgpe.harness.stats import CorrelationReport, DegenerateSample, correlate, pearson
from fgpe.harness.sweep import BudgetExceeded, RunRecord, SweepSpec, apply_parameter, run_sweep

__all__ = [
    "ParseError", "ValidationError", "parse_scenario", "serialize_scenario", "load_scenario",
    "SweepSpec", "RunRecord", "BudgetExceeded", "run_sweep", "apply_parameter",
    "pearson", "DegenerateSample", "CorrelationReport", "correlate",
    "emit_csv", "read_csv", "emit_trace_svg", "emit_series_svg",
]
