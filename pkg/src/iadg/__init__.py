"""Instance-aware domain generalization pipeline on a synthetic anti-spoofing task."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
