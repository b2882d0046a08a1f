"""Hot kernels with a compiled (Cython) backend and a numpy fallback.

The compiled extension is used when it imports; otherwise the numpy
implementation is selected. Setting ``STREAMVC_BACKEND=python`` forces the
fallback. :func:`set_backend` switches at runtime (used by tests and the
kernel benchmark).
"""

from __future__ import annotations

import contextlib
import logging
import os

import numpy as np

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _fallback}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_impl = _fallback


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def current_backend() -> str:
    return "compiled" if _impl is _ckernels and _ckernels is not None else "python"


def set_backend(name: str) -> None:
    global _impl
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    _impl = _BACKENDS[name]


@contextlib.contextmanager
def use_backend(name: str):
    previous = current_backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def conv1d_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1, stride: int = 1) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float32)
    w = np.ascontiguousarray(w, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return _impl.conv1d_valid(x, w, b, int(dilation), int(stride))


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    return _impl.masked_softmax(scores, np.asarray(mask, dtype=bool))


_requested = os.environ.get("STREAMVC_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
elif _ckernels is not None:
    set_backend("compiled")
else:
    logger.debug("compiled kernels unavailable; using numpy fallback")
