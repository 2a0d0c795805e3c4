"""Spray-geometry toolkit: one-form deformations of flat sprays, their
metrizability diagnostics, and the induced projectively flat metrics,
all verified numerically through exact jet (truncated Taylor) calculus."""

__version__ = "0.1.0"

from .jets import (
    DomainError,
    OrderError,
    TangentSample,
    ScalarField,
    ExprField,
    jet_eval,
    fd_oracle,
    SampleBox,
    sample_points,
)
from .spray import (
    SprayField,
    HomogeneityError,
    flat_spray,
    projective_deform,
    nonlinear_connection,
    jacobi,
    jacobi_alt,
    isotropy_decompose,
    horizontal_frame,
    geodesic_integrate,
)
from .oneform import OneFormCoefficients, family_b, potential, diagnostics, deformation_spray
from .metrizability import (
    Verdict,
    alpha_semibasic,
    check_condition_i,
    check_condition_ii,
    rho_of_P,
    rank_ddJ,
    metrizability_verdict,
    lie_bracket,
    holonomy_span,
    energy_check,
)
from .metrics import (
    FinslerMetricDef,
    SingularMetricError,
    NoPositiveRootError,
    family_metric,
    klein_metric,
    family_projective_factor,
    hamel_defect,
    geodesic_spray_of,
    flag_curvature,
    metric_tensor,
    randers_example,
    funk_metric,
    AffineMap,
    affine_pullback_klein,
    affine_realizability,
)
