"""Zeeman/hyperfine spectroscopy toolkit for anisotropic Kramers doublets.

Forward-models the 16-level spin Hamiltonian of an effective S = 1/2,
I = 7/2 centre, fits g- and A-tensors to field-rotation peak data, samples
parameter posteriors, and searches for zero first-order Zeeman (ZEFOZ)
operating points.
"""

import os as _os

# Honor the package thread-count variable before numpy configures its BLAS
# thread pools; deterministic output is only guaranteed for a fixed count.
_threads = _os.environ.get("SPINSPEC_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .errors import (
    DegenerateAxisError,
    InvalidParameterError,
    NonConvergenceError,
    UndefinedObjectiveError,
)
from .tensors import EulerAngles, PrincipalTensor, lab_to_principal, rotate_to_lab

__all__ = [
    "DEFAULT_CONSTANTS",
    "PhysicalConstants",
    "DegenerateAxisError",
    "InvalidParameterError",
    "NonConvergenceError",
    "UndefinedObjectiveError",
    "EulerAngles",
    "PrincipalTensor",
    "lab_to_principal",
    "rotate_to_lab",
    "__version__",
]
