"""cellflow: desk-scale cellular blood flow simulation.

A D3Q19 lattice Boltzmann plasma solver coupled through an immersed-boundary
method to deformable triangulated cells (red blood cells, platelets), with a
force-bias packing initializer, shear/wall/pre-inlet boundary handling, a
block-decomposed deterministic engine, and scenario-driven CLI entry points.
"""

from .errors import CellflowError, ConfigurationError, NumericalError, StorageError

__version__ = "0.1.0"

__all__ = [
    "CellflowError",
    "ConfigurationError",
    "NumericalError",
    "StorageError",
    "__version__",
]
