"""Radar target estimation from one-bit comparator samples with time-varying thresholds."""

from .errors import DegenerateFilterError, NumericalError
from .model import (
    MovingClutterModel,
    StationaryInterferenceModel,
    TransmitSequence,
    generate_unimodular_sequence,
    interference_covariance,
    synthesize_scene,
)
from .sampling import ThresholdBank, quantize, quantize_one_bit
from .estimate import (
    EstimatorConfig,
    estimate_bussgang,
    estimate_full_precision,
    estimate_moving,
    estimate_stationary,
)
from .harness import ExperimentConfig, run_campaign, summarize

__version__ = "0.1.0"
