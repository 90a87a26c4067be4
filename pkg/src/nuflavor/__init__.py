"""Neutrino flavor thermalization simulations."""

from nuflavor.ensemble import HamiltonianSample, build_hamiltonian, rng_for
from nuflavor.series import ObservableSeries
from nuflavor.statevector import InitialState

__version__ = "0.1.0"

__all__ = [
    "HamiltonianSample",
    "InitialState",
    "ObservableSeries",
    "build_hamiltonian",
    "rng_for",
    "__version__",
]
