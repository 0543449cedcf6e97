"""EIVEN: desk-scale multimodal generative attribute value extraction."""

from . import _threads  # noqa: F401  (pins BLAS threads before numpy loads)
from .autograd import Tensor, backward

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "__version__"]
