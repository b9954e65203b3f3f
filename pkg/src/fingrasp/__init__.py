"""Multi-finger grasp planning from circular antipodal surface representations."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    FinGraspError,
    InfeasibleGraspError,
    InsufficientDataError,
    MeshFormatError,
    NoFeasibleGraspError,
    NoGraspCellError,
    SceneTooDenseError,
    TrackInitError,
    WeightFileError,
)

__all__ = [
    "ConfigError",
    "FinGraspError",
    "InfeasibleGraspError",
    "InsufficientDataError",
    "MeshFormatError",
    "NoFeasibleGraspError",
    "NoGraspCellError",
    "SceneTooDenseError",
    "TrackInitError",
    "WeightFileError",
    "__version__",
]
