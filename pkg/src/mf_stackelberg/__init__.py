"""Leader / N-follower mean-field LQ social control.

Assembles the limiting consistency system, decouples it through a
Riccati-type transformation and checks the decentralized strategies by
Monte Carlo simulation of the realized population.
"""

from .assembly import CONVENTIONS, BlockSystem, SolvabilityError, assemble_blocks, solvability_scan
from .model import ModelError, ModelParams, compute_xi_terms, example51, validate_params
from .numerics import NumericalError, TimeGrid

__all__ = [
    "CONVENTIONS", "BlockSystem", "SolvabilityError", "assemble_blocks", "solvability_scan",
    "ModelError", "ModelParams", "compute_xi_terms", "example51", "validate_params",
    "NumericalError", "TimeGrid",
]
__version__ = "0.1.0"
