"""Symmetric simple exclusion with stirring: simulation, hydrodynamics and rate functionals."""
import os

# numba's TBB layer is often mismatched with the installed tbb; the OpenMP or
# workqueue layers are always available.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
