"""Discrete exterior calculus for variable-exponent p(x)-harmonic forms."""

__version__ = "0.1.0"

from .cochains import Cochain, coboundary, codifferential, interpolate, mass, modular
from .diagnostics import (algebra_suite, campanato_fit, local_modular, meyers_probe,
                          morrey_fit, p2_of_r, uhlenbeck_check)
from .mesh import SimplicialComplex, build_complex, generate, read_mesh, write_mesh
from .model import EnergyModel, ExponentField, WeightField, energy_gradient, total_energy
from .solver import (Solution, SolverConfig, coulomb_potential, div_curl_solve,
                     linear_hodge_solve, minimize)

__all__ = [
    "Cochain", "coboundary", "codifferential", "interpolate", "mass", "modular",
    "algebra_suite", "campanato_fit", "local_modular", "meyers_probe", "morrey_fit",
    "p2_of_r", "uhlenbeck_check", "SimplicialComplex", "build_complex", "generate",
    "read_mesh", "write_mesh", "EnergyModel", "ExponentField", "WeightField",
    "energy_gradient", "total_energy", "Solution", "SolverConfig", "coulomb_potential",
    "div_curl_solve", "linear_hodge_solve", "minimize",
]
