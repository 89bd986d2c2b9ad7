"""Ranked sparse-support detection with sequential orthogonal matching pursuit."""

from .power_shaping import ShapingSpec, make_profile
from .signal_model import PowerProfile, ProblemDims

__version__ = "0.1.0"

__all__ = ["PowerProfile", "ProblemDims", "ShapingSpec", "make_profile", "__version__"]
