"""Pseudo-spectral convective Brinkman-Forchheimer simulator with
verification and dynamic-programming tools on the periodic torus."""

from .spectral import (
    NormReport,
    PhysicalField,
    SpectralField,
    TorusGrid,
    inverse_transform,
    ipa_apply,
    ipa_solve,
    leray_project,
    norms,
    random_field,
    read_snapshot,
    stokes_apply,
    transform,
    write_snapshot,
)
from .operators import (
    AbsorptionExponent,
    convective_B,
    convective_b,
    damping_C,
    gateaux_C,
    gronwall_rate,
)
from .dynamics import (
    BlowUpError,
    CBFParams,
    ControlModel,
    ControlSignal,
    RegimeWarning,
    Trajectory,
    integrate,
    rhs,
    step,
)

__version__ = "0.1.0"
