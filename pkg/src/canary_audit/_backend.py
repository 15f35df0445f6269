"""Backend selection for the hot kernels.

The compiled extension (`canary_audit._kernels`, Cython + BLAS) is used
when it imported successfully; otherwise the pure numpy implementation
takes over. Set CANARY_AUDIT_PURE=1 to force the fallback. Both backends
implement the same operations and agree to floating-point noise; each is
individually deterministic, which is what the reproducibility contract
requires.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _purepy

_impls = {"python": _purepy}
try:  # pragma: no cover - exercised implicitly by the installed build
    from . import _kernels

    _impls["compiled"] = _kernels
except ImportError:
    _kernels = None

if os.environ.get("CANARY_AUDIT_PURE") == "1" or "compiled" not in _impls:
    _active = "python"
else:
    _active = "compiled"


def backend_name() -> str:
    return _active


def available_backends() -> tuple:
    return tuple(sorted(_impls))


def set_backend(name: str):
    global _active
    if name not in _impls:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


@contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def batch_grad(params, syms, lens, clip_norm):
    return _impls[_active].batch_grad(params, syms, lens, clip_norm)


def positions_logp(params, syms, lens):
    return _impls[_active].positions_logp(params, syms, lens)


def beam_search(params, emission, ilm_logp, lam1, lam2, beam_width):
    return _impls[_active].beam_search(
        params, emission, ilm_logp, lam1, lam2, beam_width
    )
