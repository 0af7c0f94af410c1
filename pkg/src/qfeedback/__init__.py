"""Quantum feedback control under continuous position measurement.

Submodules:

- ``hilbert``: position grid, operators, Lindblad and measurement superoperators
- ``sde``: seedable Wiener streams and the Euler-Maruyama contract
- ``dynamics``: SSE, SME and master-equation propagators
- ``estimator``: Gaussian five-moment observer and Kalman-Bucy filter
- ``control``: linearized LQG feedback and target schedules
- ``bellman``: discrete-time quantum dynamic programming
- ``experiments``: closed-loop ensembles and their statistics
"""

from .errors import ConfigError, FilterDivergence, IntegrationError, QFeedbackError, UsageError
from .hilbert import GridSpec, PotentialParams, build_space
from .dynamics import MeasurementModel
from .control import ControlParams, TargetSchedule
from .estimator import GaussianBelief
from .experiments import SimConfig, run_ensemble, run_trajectory

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FilterDivergence",
    "IntegrationError",
    "QFeedbackError",
    "UsageError",
    "GridSpec",
    "PotentialParams",
    "build_space",
    "MeasurementModel",
    "ControlParams",
    "TargetSchedule",
    "GaussianBelief",
    "SimConfig",
    "run_ensemble",
    "run_trajectory",
]
