"""Numerical engine for sections of block-rotation-invariant star bodies.

Submodules
----------
symmetry   block rotations, Haar sampling, orbit geometry
bodies     star bodies and measure densities
sphere     orbit subspace frames and sphere quadrature
radon      sub-sphere Radon transform, operator, section volumes
ibody      intersection bodies, membership certificates, counterexamples
ineq       section-volume inequalities and stability bounds
busemann   section-curve convexity diagnostics
cli        command line front end
"""

from . import bodies, busemann, ibody, ineq, radon, sphere, symmetry
from .errors import (
    BadExponent,
    BadSubspace,
    ConvexityLost,
    DictionaryTooSmall,
    DimensionMismatch,
    HypothesisViolated,
    InvalidSpec,
    KBodyError,
    NoNegativeRegion,
    NonStarBody,
    NotCertified,
    NotUnit,
    SingularOperator,
    StepTooSmall,
    UnsupportedDimension,
    ZeroVector,
)
from .symmetry import BlockRotation, Dimensions

__version__ = "0.1.0"
