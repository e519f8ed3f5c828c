"""Replay backend selection.

The compiled kernel (``colloc._kernels``) is used when importable; set
``COLLOC_PURE_PYTHON=1`` to force the pure-Python implementation.
"""
from __future__ import annotations

import os

from . import _replay_py

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

BACKENDS = {"python": _replay_py.replay}
if _kernels is not None:
    BACKENDS["cython"] = _kernels.replay

if os.environ.get("COLLOC_PURE_PYTHON") or _kernels is None:
    DEFAULT = "python"
else:
    DEFAULT = "cython"


def get_replay(name: str | None = None):
    name = name or DEFAULT
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
