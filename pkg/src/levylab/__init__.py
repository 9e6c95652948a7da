"""Maximal-degree laws of Levy trees, with Monte Carlo cross-checks."""
__version__ = "0.1.0"

from .errors import AtomicPi, InfiniteMass, NonConvergence, QuadratureError, ZeroTail
from .mechanism import (AtomicMeasure, BranchingMechanism, MechanismVariant, StableMeasure,
                        TabulatedMeasure, invert, load_mechanism, phi, psi, psi_prime,
                        psi_zero, stable_mechanism)

__all__ = ["AtomicMeasure", "BranchingMechanism", "MechanismVariant", "StableMeasure",
           "TabulatedMeasure", "invert", "load_mechanism", "phi", "psi", "psi_prime",
           "psi_zero", "stable_mechanism", "AtomicPi", "InfiniteMass", "NonConvergence",
           "QuadratureError", "ZeroTail", "__version__"]
