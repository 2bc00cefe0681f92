"""cemlab: 2D complete-electrode-model forward solvers and an edge-asymptotics lab.

A semi-analytic Riemann-Hilbert oracle on the half-plane/disc is paired with
a singularity-aware P1 finite-element solver to compute and cross-validate
the inverse-square-root blow-up of the boundary current density at electrode
edges, and its corner generalization.
"""

from .geometry import (
    CurrentPattern,
    DomainKind,
    DomainSpec,
    ElectrodeLayout,
    boundary_point,
    corner_fold,
    corner_unfold,
    dist_to_nearest_edge,
    mobius_disc_to_halfplane,
    mobius_halfplane_to_disc,
    validate_layout,
)
from .oracle import (
    BranchProduct,
    DiscOracleSolution,
    HalfPlaneProblem,
    OracleSolution,
    disc_oracle,
    solve_coefficients,
)

__all__ = [
    "CurrentPattern",
    "DomainKind",
    "DomainSpec",
    "ElectrodeLayout",
    "boundary_point",
    "corner_fold",
    "corner_unfold",
    "dist_to_nearest_edge",
    "mobius_disc_to_halfplane",
    "mobius_halfplane_to_disc",
    "validate_layout",
    "BranchProduct",
    "DiscOracleSolution",
    "HalfPlaneProblem",
    "OracleSolution",
    "disc_oracle",
    "solve_coefficients",
]

__version__ = "0.1.0"
