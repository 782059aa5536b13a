"""Adversarially trained CNN+BiLSTM text classifier with a
finite-difference-checked gradient core."""

from .kernels import BACKEND as kernel_backend

__version__ = "0.1.0"
__all__ = ["kernel_backend", "__version__"]
