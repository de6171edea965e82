"""Certify structural properties of parameter-varying linear systems.

Controllability, observability and related properties are decided with
rank tests on spectral matrices, over parameter boxes, under structured
perturbations and with state and input delays.
"""

__version__ = "0.1.0"

from .cover import CoverBox, CoverCertificate, certify_positive, derivative_bound
from .delay import (
    DelaySystem,
    DelayTerm,
    LiftedPoint,
    assemble_delay_pbh,
    assemble_lifted_pbh,
    collapse,
    consistency_check,
    delay_dependent_test,
    delay_independent_test,
    lift_at,
)
from .model import (
    AffineFamily,
    BoxDomain,
    ChannelStructure,
    DeltaAssignment,
    LpvSystem,
    ParameterPoint,
    PerturbationStructure,
    recenter,
    recenter_delta,
    validate,
)
from .pbh import (
    DomainReport,
    PbhKind,
    Property,
    PropertyVerdict,
    Verdict,
    ZeroKind,
    assemble_pbh,
    check_property_at,
    classify_zeros,
    dual,
    dual_delta,
    sweep_domain,
)
from .robustness import (
    RadiusResult,
    ViolationWitness,
    bound_constants,
    construct_violation,
    is_admissible,
    preservation_radius,
    verify_radius,
)
