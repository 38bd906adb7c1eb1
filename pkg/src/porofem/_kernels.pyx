# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add(double[::1] data, positions, values):
    cdef const cnp.int64_t[::1] pos = np.ascontiguousarray(positions, dtype=np.int64).ravel()
    cdef const double[::1] val = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t k, n = pos.shape[0]
    if val.shape[0] != n:
        raise ValueError("positions and values differ in length")
    with nogil:
        for k in range(n):
            data[pos[k]] += val[k]


def weighted_local_scatter(double[::1] data, positions, coef, ref):
    cdef const cnp.int64_t[:, ::1] pos = np.ascontiguousarray(positions, dtype=np.int64).reshape(
        positions.shape[0], -1)
    cdef const double[:, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(ref, dtype=np.float64).reshape(ref.shape[0], -1)
    cdef Py_ssize_t nc = pos.shape[0], nk = pos.shape[1], nq = R.shape[0]
    cdef Py_ssize_t c, q, k
    cdef double w
    if cf.shape[0] != nc or cf.shape[1] != nq or R.shape[1] != nk:
        raise ValueError("shape mismatch between positions, coef and ref")
    # one cell matrix at a time in a contiguous buffer, so the sum over
    # quadrature points streams through ref row by row
    cdef double[::1] buf = np.empty(nk, dtype=np.float64)
    with nogil:
        for c in range(nc):
            w = cf[c, 0]
            for k in range(nk):
                buf[k] = w * R[0, k]
            for q in range(1, nq):
                w = cf[c, q]
                for k in range(nk):
                    buf[k] += w * R[q, k]
            for k in range(nk):
                data[pos[c, k]] += buf[k]


def cell_apply(coeffs, cell_dofs, op):
    # the gather is the irregular part and runs compiled; the dense
    # (cells x dofs) @ (dofs x rows) product is left to BLAS, which beats
    # a scalar triple loop for these small operators
    cdef const double[::1] x = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] cd = np.ascontiguousarray(cell_dofs, dtype=np.int64)
    cdef Py_ssize_t nc = cd.shape[0], nl = cd.shape[1]
    cdef Py_ssize_t c, i
    A = np.asarray(op, dtype=np.float64)
    if A.shape[1] != nl:
        raise ValueError("operator width does not match dofs per cell")
    local = np.empty((nc, nl), dtype=np.float64)
    cdef double[:, ::1] g = local
    with nogil:
        for c in range(nc):
            for i in range(nl):
                g[c, i] = x[cd[c, i]]
    return local @ A.T
