"""Visual-inertial motion capture: learned trackers plus LM refinement on a synthetic rig."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
