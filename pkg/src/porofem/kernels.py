"""Backend selection for the assembly kernels.

The compiled extension is used when it was built; otherwise, or when
``POROFEM_PURE_PYTHON=1`` is set, the NumPy versions are used.
"""

import os

from . import _kernels_py

if os.environ.get("POROFEM_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

scatter_add = _impl.scatter_add
weighted_local_scatter = _impl.weighted_local_scatter
cell_apply = _impl.cell_apply

__all__ = ["BACKEND", "scatter_add", "weighted_local_scatter", "cell_apply"]
