"""Lexical translation (IBM Model 1) retrieval and re-ranking toolkit."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
