"""NumPy implementations of the assembly kernels.

Every function here has a twin in ``_kernels.pyx`` with identical
semantics; ``porofem.kernels`` picks one at import time.
"""

import numpy as np


def scatter_add(data, positions, values):
    """``data[positions[k]] += values[k]`` for every k, in index order."""
    positions = np.ascontiguousarray(positions).ravel()
    values = np.ascontiguousarray(values, dtype=np.float64).ravel()
    data += np.bincount(positions, weights=values, minlength=data.shape[0])


def weighted_local_scatter(data, positions, coef, ref):
    """Accumulate coefficient-weighted cell matrices into CSR ``data``.

    ``positions`` is (n_cells, n_rows, n_cols), ``coef`` is
    (n_cells, n_quad) and ``ref`` is (n_quad, n_rows, n_cols); cell ``c``
    contributes ``sum_q coef[c, q] * ref[q]``.
    """
    local = np.einsum("cq,qij->cij", coef, ref, optimize=True)
    scatter_add(data, positions, local)


def cell_apply(coeffs, cell_dofs, op):
    """Apply a per-cell linear operator: ``out[c] = op @ coeffs[cell_dofs[c]]``."""
    return coeffs[cell_dofs] @ op.T
