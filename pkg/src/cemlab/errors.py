"""Exception types shared across cemlab.

Every error carries a short machine-readable ``code`` (used by the CLI to
print ``error:<code>:<message>``) and an ``exit_code``: 1 for invalid input
or configuration, 2 for numerical failures.
"""

from __future__ import annotations


class CemlabError(Exception):
    code = "error"
    exit_code = 1


class InputError(CemlabError):
    """Bad input data or configuration."""

    exit_code = 1


class NumericalError(CemlabError):
    """A numerical procedure failed to meet its tolerance."""

    exit_code = 2


# --- geometry / layout ------------------------------------------------------

class OverlappingArcs(InputError):
    code = "overlapping_arcs"

    def __init__(self, i: int, j: int):
        self.indices = (i, j)
        super().__init__(f"electrode arcs {i} and {j} overlap (or are unordered)")


class EmptyArc(InputError):
    code = "empty_arc"

    def __init__(self, i: int):
        self.index = i
        super().__init__(f"electrode arc {i} has non-positive length")


class OutOfRange(InputError):
    code = "out_of_range"

    def __init__(self, what, detail: str = ""):
        self.what = what
        super().__init__(f"{what} out of range{': ' + detail if detail else ''}")


class PoleAtMinusOne(InputError):
    code = "pole_at_minus_one"


class OriginSingularity(InputError):
    code = "origin_singularity"


class InvalidAngle(InputError):
    code = "invalid_angle"


# --- half-plane oracle ------------------------------------------------------

class CurrentImbalance(InputError):
    code = "current_imbalance"


class TooFewElectrodes(InputError):
    code = "too_few_electrodes"


class SingularSystem(NumericalError):
    code = "singular_system"


class QuadratureFailure(NumericalError):
    code = "quadrature_failure"


class BranchPointEvaluation(InputError):
    code = "branch_point_evaluation"


class NotOnElectrode(InputError):
    code = "not_on_electrode"


class NotOnGap(InputError):
    code = "not_on_gap"


class NotAnEndpoint(InputError):
    code = "not_an_endpoint"


class ElectrodeThroughInfinity(InputError):
    code = "electrode_through_infinity"


# --- FEM --------------------------------------------------------------------

class GradingTooAggressive(NumericalError):
    code = "grading_too_aggressive"


class LayoutConflict(InputError):
    code = "layout_conflict"


class NonPositiveConductivity(InputError):
    code = "non_positive_conductivity"


class IncompatibleLoad(InputError):
    code = "incompatible_load"


class NonConvergence(NumericalError):
    code = "non_convergence"

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"linear solver did not converge: {iterations} iterations, "
            f"relative residual {residual:.3e}"
        )


class SingularBoundaryMass(NumericalError):
    code = "singular_boundary_mass"


class OverlappingCutoffs(InputError):
    code = "overlapping_cutoffs"


# --- asymptotics ------------------------------------------------------------

class InsufficientSamples(InputError):
    code = "insufficient_samples"


class NonPositiveValue(InputError):
    code = "non_positive_value"


class ProbeOutsideDomain(InputError):
    code = "probe_outside_domain"


# --- CLI --------------------------------------------------------------------

class ConfigError(InputError):
    code = "config"

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
