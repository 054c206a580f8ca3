"""Kernel backend selection.

Prefers the compiled extension when it imported cleanly, otherwise falls back
to the numpy implementations.  ``CAPSEG_FORCE_NUMPY=1`` forces the fallback,
which the benchmark and parity tests use to compare both paths in-process.
"""

from __future__ import annotations

import os

from capseg import _kernels_py

if os.environ.get("CAPSEG_FORCE_NUMPY"):
    kernels = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from capseg import _kernels as _compiled

        kernels = _compiled
        BACKEND = "compiled"
    except ImportError:  # extension not built; numpy path is fully equivalent
        kernels = _kernels_py
        BACKEND = "numpy"

assign_points = kernels.assign_points
blur_field = kernels.blur_field
majority_pass = kernels.majority_pass
