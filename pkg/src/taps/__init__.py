"""Separated space-parameter-time Galerkin solvers on convolution-enriched 1D bases."""
from __future__ import annotations

__version__ = "0.1.0"
