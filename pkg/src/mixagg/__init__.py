"""Sparse convex aggregation of densities by maximum likelihood over the simplex."""

from mixagg.exceptions import DomainError, InfeasibleError, PackingError

__version__ = "0.1.0"

__all__ = ["DomainError", "InfeasibleError", "PackingError", "__version__"]
