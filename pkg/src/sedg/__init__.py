"""Spectral-element DG discretization of the Poisson problem with a
two-stage auxiliary-space preconditioner on conforming multipatch meshes."""

from .lgl import Interval, LglRule, build_lgl_rule, gauss_rule, quadrature
from .grids import (
    DyadicPartition,
    NestedDyadicFamily,
    OrderedGrid,
    build_nested_family,
    dyadic_generate,
)
from .mesh import Mesh, Patch, build_mesh
from .spaces import DFE_CG, SE_CG, SE_DG, Discretization, build_dofmap

__all__ = [
    "Interval",
    "LglRule",
    "build_lgl_rule",
    "gauss_rule",
    "quadrature",
    "OrderedGrid",
    "DyadicPartition",
    "NestedDyadicFamily",
    "dyadic_generate",
    "build_nested_family",
    "Mesh",
    "Patch",
    "build_mesh",
    "Discretization",
    "build_dofmap",
    "SE_DG",
    "SE_CG",
    "DFE_CG",
]
