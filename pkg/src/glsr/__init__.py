"""Global/local selective-scan network for reference-guided super-resolution."""

from .tensor import Tensor
from . import backend

__version__ = "0.1.0"
__all__ = ["Tensor", "backend", "__version__"]
