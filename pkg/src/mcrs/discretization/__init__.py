from .elements import Q0, Q1, Q2, QuadratureRule, ReferenceElement, element_family, gauss_rule
from .space import FunctionSpace, build_space, scalar_dof_layout
from .assembly import (
    apply_dirichlet,
    assemble_convection,
    assemble_divergence,
    assemble_mass,
    assemble_pressure_mass,
    assemble_scalar_mass,
    assemble_scalar_stiffness,
    assemble_stiffness,
    convection_vector,
    dump_triplets,
    evaluate_at_quadrature,
    l2_project,
    load_vector,
    mean_rows,
    project_divergence_free,
    project_pressure,
)

__all__ = [
    "Q0", "Q1", "Q2", "QuadratureRule", "ReferenceElement", "element_family", "gauss_rule",
    "FunctionSpace", "build_space", "scalar_dof_layout",
    "apply_dirichlet", "assemble_convection", "assemble_divergence", "assemble_mass",
    "assemble_pressure_mass", "assemble_scalar_mass", "assemble_scalar_stiffness",
    "assemble_stiffness", "convection_vector", "dump_triplets", "evaluate_at_quadrature",
    "l2_project", "load_vector", "mean_rows", "project_divergence_free", "project_pressure",
]
