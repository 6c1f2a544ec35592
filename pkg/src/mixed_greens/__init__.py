"""Semiclassical energy Green functions in position, momentum and mixed representations."""

__version__ = "0.1.0"

from .dynamics import ModelKind, ModelSpec, PhasePoint, Representation, hamiltonian
from .errors import MixedGreensError
from .greens import GreensValue, assemble, energy_scan, momentum_greens, position_greens
from .pathfinder import BoundaryCondition, SearchParams, find_trajectories
from .trajectory import Trajectory, integrate

__all__ = [
    "__version__",
    "ModelKind",
    "ModelSpec",
    "PhasePoint",
    "Representation",
    "hamiltonian",
    "MixedGreensError",
    "GreensValue",
    "assemble",
    "energy_scan",
    "momentum_greens",
    "position_greens",
    "BoundaryCondition",
    "SearchParams",
    "find_trajectories",
    "Trajectory",
    "integrate",
]
