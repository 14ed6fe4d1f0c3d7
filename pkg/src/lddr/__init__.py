"""Face alignment by cascaded linear regression on local deep descriptors.

Set ``LDDR_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""
__version__ = "0.1.0"

from .cascade import CascadeModel, TrainConfig, load_model, predict, save_model, train_cascade
from .errors import (
    ConfigurationError,
    GeometryError,
    InputError,
    LddrError,
    MetricError,
    NumericalError,
    ParseError,
    WeightHashMismatch,
)
from .kernels import BACKEND
from .metrics import ced_curve, evaluate, nme
from .net import Engine, init_random_weights, load_weights, save_weights, shared_engine, standard_stages
from .shape import FaceFrame, PatchSchedule

__all__ = [
    "BACKEND",
    "CascadeModel",
    "ConfigurationError",
    "Engine",
    "FaceFrame",
    "GeometryError",
    "InputError",
    "LddrError",
    "MetricError",
    "NumericalError",
    "ParseError",
    "PatchSchedule",
    "TrainConfig",
    "WeightHashMismatch",
    "ced_curve",
    "evaluate",
    "init_random_weights",
    "load_model",
    "load_weights",
    "nme",
    "predict",
    "save_model",
    "save_weights",
    "shared_engine",
    "standard_stages",
    "train_cascade",
]
