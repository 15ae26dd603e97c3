"""Retrieval-augmented DDPG for unsupervised RL on a numpy autodiff core."""

from .config import RunConfig
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"
__all__ = ["RunConfig", "Tensor", "backward", "no_grad", "__version__"]
