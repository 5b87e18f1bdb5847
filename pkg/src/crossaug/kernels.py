"""Backend selection for the hot loss kernels.

The compiled Cython extension is used when it imports; otherwise the numpy
implementation in ``_kernels_py`` is used. :func:`set_backend` switches at
runtime (tests and the benchmark script compare both).
"""
from __future__ import annotations

from . import _kernels_py

try:
    from . import _kernels as _native
except ImportError:  # extension not built
    _native = None

HARDEST = _kernels_py.HARDEST
ALL_PAIRS = _kernels_py.ALL_PAIRS

_BACKENDS = {"python": _kernels_py}
if _native is not None:
    _BACKENDS["native"] = _native

_active = "native" if _native is not None else "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available_backends()}")
    _active = name


def triplet_forward_backward(img, txt, labels, margin: float, mining: int):
    return _BACKENDS[_active].triplet_forward_backward(img, txt, labels, float(margin), int(mining))


def balanced_softmax_forward_backward(logits, labels, log_counts):
    return _BACKENDS[_active].balanced_softmax_forward_backward(logits, labels, log_counts)
