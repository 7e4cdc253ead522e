"""Rollout kernel backend selection.

The compiled extension is used when it imports; setting ``EPICRL_PURE_PYTHON=1``
forces the pure-Python implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("EPICRL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

cartpole_rollout = _impl.cartpole_rollout
tabular_rollout = _impl.tabular_rollout
cartpole_step = _kernels_py.cartpole_step
X_THRESHOLD = _kernels_py.X_THRESHOLD
THETA_THRESHOLD = _kernels_py.THETA_THRESHOLD

__all__ = ["BACKEND", "cartpole_rollout", "tabular_rollout", "cartpole_step", "X_THRESHOLD", "THETA_THRESHOLD"]
