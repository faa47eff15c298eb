"""Compositional gas flow in deformable porous media: Peng-Robinson thermodynamics,
Maxwell-Stefan-Darcy velocities, bound-preserving transport and DG poroelasticity."""
from .mesh import SimplicialMesh, build_structured_triangulation
from .stepper import (
    InvariantViolation,
    Problem,
    SimulationState,
    StepFailure,
    Stepper,
    StepReport,
    TimeStepControls,
    run,
)
from .thermo import ComponentSpec, EoSParams, MixtureSpec

__version__ = "0.1.0"

__all__ = [
    "ComponentSpec",
    "EoSParams",
    "InvariantViolation",
    "MixtureSpec",
    "Problem",
    "SimplicialMesh",
    "SimulationState",
    "StepFailure",
    "StepReport",
    "Stepper",
    "TimeStepControls",
    "build_structured_triangulation",
    "run",
]
