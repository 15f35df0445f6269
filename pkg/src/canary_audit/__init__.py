"""Desk-scale audit of unintended LM memorization through a fused recognizer."""

from ._backend import backend_name, available_backends, set_backend, use_backend

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "available_backends",
    "set_backend",
    "use_backend",
    "__version__",
]
