"""Exception hierarchy shared across the toolkit."""


class FinGraspError(Exception):
    """Base class for all toolkit errors."""


class MeshFormatError(FinGraspError):
    """Mesh file could not be parsed; message carries line/offset context."""


class SceneTooDenseError(FinGraspError):
    """Object placement failed after the rejection budget was exhausted."""


class NoGraspCellError(FinGraspError):
    """A representation grid contains no cell with a positive score."""


class InfeasibleGraspError(FinGraspError):
    """Requested grasp cannot be realized by the hand (width out of range)."""


class NoFeasibleGraspError(FinGraspError):
    """Every candidate grasp was rejected (e.g. all collide)."""


class WeightFileError(FinGraspError):
    """Decision-model weight file is corrupt or has the wrong version."""


class InsufficientDataError(FinGraspError):
    """Dataset is too small for the requested operation."""


class TrackInitError(FinGraspError):
    """Track initialization failed (no feasible grasp in the first frame)."""


class ConfigError(FinGraspError):
    """Run configuration is malformed (unknown keys, bad values)."""
