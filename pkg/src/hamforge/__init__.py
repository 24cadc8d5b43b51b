"""Molecular Hamiltonian networks: conformation engine and fingerprints."""
from .config import TrainConfig
from .estimators import HamiltonianEngine, HamNetClassifier, HamNetRegressor

__version__ = "0.1.0"

__all__ = ["HamiltonianEngine", "HamNetClassifier", "HamNetRegressor", "TrainConfig", "__version__"]
