"""Tractor-trailer path tracking testbed: receding-horizon controller,
sliding-window estimator, truth simulator, and batch experiment harness."""

from .config import ExperimentConfig
from .harness import MetricsReport, compute_metrics, run_experiment
from .model import DomainError, VehicleGeometry
from .nmhe import MeasSample, MheConfig, MheEstimator, TimestampError
from .nmpc import NmpcController, OcpConfig
from .path import ConfigError, Path, build_eight_track, build_path, project
from .plant import Plant, PlantConfig, SensorConfig, SlipSchedule
from .qp import DenseBoxQP, solve_box_qp

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DenseBoxQP",
    "DomainError",
    "ExperimentConfig",
    "MeasSample",
    "MetricsReport",
    "MheConfig",
    "MheEstimator",
    "NmpcController",
    "OcpConfig",
    "Path",
    "Plant",
    "PlantConfig",
    "SensorConfig",
    "SlipSchedule",
    "TimestampError",
    "VehicleGeometry",
    "build_eight_track",
    "build_path",
    "compute_metrics",
    "project",
    "run_experiment",
    "solve_box_qp",
]
