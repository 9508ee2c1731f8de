"""Sampling- and offloading-aware federated learning over D2D edge networks."""
from ._kernels import backend_name

__version__ = "0.1.0"
__all__ = ["backend_name", "__version__"]
