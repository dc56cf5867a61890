"""Extended CUSUM detection for a drift change triggered at Poisson occurrences.

Modules: ``types`` (parameters), ``analytic`` (closed-form run lengths and
calibration), ``simulate`` (Monte Carlo), ``framework`` (exact finite-model
delay measures), ``stream`` (online detector) and ``cli``.
"""

from __future__ import annotations

from .analytic import (
    calibrate_cusum_threshold,
    calibrate_threshold,
    curve_table,
    cusum_operating_point,
    delay_g,
    ecusum_operating_point,
    expected_run_length,
    false_alarm_h,
)
from .simulate import SimConfig, TruncationError, monte_carlo_run_length, simulate_run_length
from .stream import MalformedStreamError, StreamDetector, StreamRecord, run_detector
from .types import DriftChangeSpec, GeneralizedDrift, Regime, RunLengthEstimate, Threshold

__version__ = "0.1.0"

__all__ = [
    "DriftChangeSpec",
    "GeneralizedDrift",
    "MalformedStreamError",
    "Regime",
    "RunLengthEstimate",
    "SimConfig",
    "StreamDetector",
    "StreamRecord",
    "Threshold",
    "TruncationError",
    "calibrate_cusum_threshold",
    "calibrate_threshold",
    "curve_table",
    "cusum_operating_point",
    "delay_g",
    "ecusum_operating_point",
    "expected_run_length",
    "false_alarm_h",
    "monte_carlo_run_length",
    "run_detector",
    "simulate_run_length",
]
