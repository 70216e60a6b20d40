"""Kernel backend selection: compiled extension if importable, numpy otherwise.

Override with IMUPOSE_BACKEND=numpy|compiled. Both backends expose
conv2d_forward / conv2d_backward / lstm_forward_core / lstm_backward_core
with identical semantics (see kernels_np).
"""

from __future__ import annotations

import os

from . import kernels_np

_IMPLS = {"numpy": kernels_np}

try:
    from . import _kernels_cy
    _IMPLS["compiled"] = _kernels_cy
except ImportError:
    _kernels_cy = None


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def _select_default() -> str:
    forced = os.environ.get("IMUPOSE_BACKEND", "").strip().lower()
    if forced:
        if forced not in _IMPLS:
            raise ImportError(
                f"IMUPOSE_BACKEND={forced!r} not available; have {available_backends()}")
        return forced
    return "compiled" if "compiled" in _IMPLS else "numpy"


_DEFAULT = _select_default()


def active_backend() -> str:
    return _DEFAULT


def get_kernels(name: str | None = None):
    """The kernel module for `name` (default: the backend selected at import)."""
    return _IMPLS[name or _DEFAULT]
