"""Adversarial robustness evaluation for toy semantic segmentation models."""
from .tensor_core import IGNORE

__version__ = "0.1.0"
__all__ = ["IGNORE", "__version__"]
