"""Continuous steering-vector field reconstruction from sparse noisy
measurements: complex GP regression with a physics-aware composite kernel,
classical and neural baselines, synthetic scenes, interpolation metrics and
an MVDR beamforming evaluation.
"""

__version__ = "0.1.0"

from .geom import CollocationPoint, Direction, PointSet  # noqa: F401
from .datagen import FieldDataset, SceneConfig  # noqa: F401
from .gpr import FitConfig, GprModel  # noqa: F401
