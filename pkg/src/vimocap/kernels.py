"""Hot numeric kernels, compiled when available.

The Cython extension ``vimocap._fastkernels`` is used if it imports; the
numpy versions in ``vimocap._kernels_py`` are used otherwise or when the
environment variable ``VIMOCAP_PURE_PYTHON=1`` is set.  ``BACKEND`` names the
active choice.
"""
import os

from . import _kernels_py

if os.environ.get("VIMOCAP_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _fastkernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

gram_schmidt = _impl.gram_schmidt
euler_xyz_to_matrix = _impl.euler_xyz_to_matrix
forward_kinematics = _impl.forward_kinematics
project_points = _impl.project_points
second_difference = _impl.second_difference

__all__ = [
    "BACKEND",
    "gram_schmidt",
    "euler_xyz_to_matrix",
    "forward_kinematics",
    "project_points",
    "second_difference",
]
