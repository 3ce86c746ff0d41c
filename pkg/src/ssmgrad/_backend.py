"""Kernel backend selection.

The forward pass has two interchangeable implementations: a Cython
extension (``ssmgrad._kernel``) and a pure-NumPy reference loop.  The
extension is preferred when it imported successfully; set
``SSMGRAD_BACKEND=python`` or ``SSMGRAD_BACKEND=compiled`` to force one.
"""

from __future__ import annotations

import os

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built; pure-Python fallback
    _compiled = None

_ENV_VAR = "SSMGRAD_BACKEND"
_VALID = ("compiled", "python")


def have_compiled() -> bool:
    return _compiled is not None


def compiled_kernel():
    if _compiled is None:
        raise RuntimeError("compiled kernel is not available")
    return _compiled


def available_backends() -> tuple[str, ...]:
    return _VALID if have_compiled() else ("python",)


def resolve(name: str | None = None) -> str:
    """Pick the backend: explicit argument > environment > best available."""
    choice = name or os.environ.get(_ENV_VAR, "").lower() or None
    if choice is None:
        return "compiled" if have_compiled() else "python"
    if choice not in _VALID:
        raise ValueError(f"unknown backend {choice!r}; expected one of {_VALID}")
    if choice == "compiled" and not have_compiled():
        raise RuntimeError(
            "compiled backend requested but the ssmgrad._kernel extension "
            "is not importable; rebuild the package or use backend='python'"
        )
    return choice
