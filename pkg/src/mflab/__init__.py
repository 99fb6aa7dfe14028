"""Desk-scale numerical laboratory for bosonic mean-field dynamics on periodic lattices."""

__version__ = "0.1.0"

import os as _os

# numba: the bundled TBB is too old; use the OpenMP/workqueue layers quietly
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .errors import (
    BudgetError,
    ConfigError,
    DenseCapError,
    InvariantViolation,
    TruncationError,
)
from .lattice import Grid, LatticeWavefunction, PotentialSpec

__all__ = [
    "__version__",
    "BudgetError",
    "ConfigError",
    "DenseCapError",
    "InvariantViolation",
    "TruncationError",
    "Grid",
    "LatticeWavefunction",
    "PotentialSpec",
]
