"""Convex functionals, their resolvents and the Luxemburg norm."""

from .functionals import (
    E1,
    Compiled,
    DirichletRestricted,
    FunctionalSpec,
    GraphPEnergy,
    Perturbed,
    Quadratic,
    Zero,
    evaluate,
    functional_from_dict,
    gradient,
    perturbation,
)
from .norm import luxemburg_norm
from .profiles import (
    BProfile,
    Integrand,
    PowerLaw,
    Table,
    VertexMeasure,
    Well,
    ZeroB,
    integrand_from_dict,
    weighted_integral,
)
from .prox import ProxResult, Resolvent, prox, prox_solve

subgradient_element = gradient

__all__ = [
    "E1", "Compiled", "DirichletRestricted", "FunctionalSpec", "GraphPEnergy", "Perturbed",
    "Quadratic", "Zero", "evaluate", "functional_from_dict", "gradient", "subgradient_element",
    "perturbation", "luxemburg_norm", "BProfile", "Integrand", "PowerLaw", "Table",
    "VertexMeasure", "Well", "ZeroB", "integrand_from_dict", "weighted_integral",
    "ProxResult", "Resolvent", "prox", "prox_solve",
]
