"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback is used.  FLOWMTL_BACKEND=numpy|compiled forces a choice, and
tests/benchmarks can switch explicitly via set_backend().
"""

from __future__ import annotations

import os

from flowmtl.errors import ConfigError
from flowmtl.nn import kernels_numpy

_BACKENDS = {"numpy": kernels_numpy}
try:
    from flowmtl.nn import _kernels

    _BACKENDS["compiled"] = _kernels
except ImportError:
    _kernels = None

_forced = os.environ.get("FLOWMTL_BACKEND")
if _forced:
    if _forced not in _BACKENDS:
        raise ConfigError(
            f"FLOWMTL_BACKEND={_forced!r} is not available "
            f"(choices: {sorted(_BACKENDS)})")
    _active = _BACKENDS[_forced]
else:
    _active = _BACKENDS.get("compiled", kernels_numpy)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active.NAME


def get_backend():
    """Module exposing conv1d_forward/backward and maxpool2_forward/backward."""
    return _active


def set_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ConfigError(f"unknown backend {name!r} (choices: {sorted(_BACKENDS)})")
    _active = _BACKENDS[name]
    return _active
