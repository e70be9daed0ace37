"""Nonlinear Dirichlet forms on finite measure spaces.

Subpackages and modules:

* :mod:`dflow.space` -- finite spaces, fields, lattice operations
* :mod:`dflow.forms` -- convex functionals, resolvents, Luxemburg norm
* :mod:`dflow.semigroup` -- implicit-Euler gradient flows and comparisons
* :mod:`dflow.properties` -- sampled checks of lattice and domination inequalities
* :mod:`dflow.capacity` -- norm-capacity of vertex sets
* :mod:`dflow.rieszmarkov` -- recovering a pointwise integrand from a local functional
* :mod:`dflow.experiments`, :mod:`dflow.cli` -- config-driven runner
"""

from .space import Field, FiniteSpace, VertexSet

__version__ = "0.1.0"

__all__ = ["Field", "FiniteSpace", "VertexSet", "__version__"]
