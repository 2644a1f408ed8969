"""chainlab: numerical laboratory for symmetric Markov chains on Z^d.

Builds chains from symmetric conductances with possibly unbounded range,
computes their exact small-domain quantities (heat kernels, Green functions,
harmonic functions, exit times), extracts homogenized diffusion matrices,
and verifies heat-kernel, Harnack, and central-limit behavior at desk scale.
"""

from .models import (
    BUILTIN_NAMES,
    ConductanceModel,
    EnvelopeTooHeavyError,
    ModelError,
    builtin_model,
    truncation_radius,
    vertex_weight,
)
from .lattice import (
    GeneratorMatrix,
    LatticeWindow,
    RescaledForm,
    build_generator,
    dirichlet_energy,
    transition_matrix,
)
from .audit import AssumptionReport, audit_assumptions

__all__ = [
    "BUILTIN_NAMES",
    "ConductanceModel",
    "EnvelopeTooHeavyError",
    "ModelError",
    "builtin_model",
    "truncation_radius",
    "vertex_weight",
    "GeneratorMatrix",
    "LatticeWindow",
    "RescaledForm",
    "build_generator",
    "dirichlet_energy",
    "transition_matrix",
    "AssumptionReport",
    "audit_assumptions",
]

__version__ = "0.1.0"
