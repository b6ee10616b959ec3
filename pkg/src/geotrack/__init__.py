"""geotrack: multi-view geospatial tracking with calibrated uncertainty.

A library and CLI for fusing full-covariance Gaussian detections from
multiple camera views with a constant-velocity multi-observation Kalman
tracker, recalibrating and fine-tuning detection uncertainty, and scoring
trackers with probabilistic metrics, driven by a synthetic multi-camera
scenario simulator.
"""

__version__ = "0.1.0"

from .calibration import CalibrationGrid, CalibrationParams
from .core import Arena, Gaussian2D, NotPositiveDefiniteError, ObjectPose, nll
from .heads import RawHead, head_to_gaussian
from .kalman import DetectionFrame, FilterParams, KalmanState, run_sequence
from .metrics import AlphaSweep, EvalRecord, MetricReport, evaluate
from .simulator import CameraNode, ScenarioConfig, build_dataset, default_scenario
from .tuning import TunableParams, TuneConfig

__all__ = [
    "__version__",
    "AlphaSweep",
    "Arena",
    "CalibrationGrid",
    "CalibrationParams",
    "CameraNode",
    "DetectionFrame",
    "EvalRecord",
    "FilterParams",
    "Gaussian2D",
    "KalmanState",
    "MetricReport",
    "NotPositiveDefiniteError",
    "ObjectPose",
    "RawHead",
    "ScenarioConfig",
    "TunableParams",
    "TuneConfig",
    "build_dataset",
    "default_scenario",
    "evaluate",
    "head_to_gaussian",
    "nll",
    "run_sequence",
]
