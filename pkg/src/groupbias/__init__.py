"""Group membership bias in ranking: simulation, metrics, theory and correction."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
