"""Sparse direct factorization with a fixed sparsity pattern.

The step matrix keeps its pattern for a whole run, so the symbolic
analysis is done once and only the numeric factorization is repeated.
MKL PARDISO (through ``pypardiso``) is used when it can be loaded;
otherwise SciPy's SuperLU is used, which redoes the full factorization.
"""

from __future__ import annotations

import ctypes.util
import glob
import logging
import os
import site
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class FactorizationError(RuntimeError):
    pass


def _locate_mkl_rt():
    if os.environ.get("PYPARDISO_MKL_RT"):
        return os.environ["PYPARDISO_MKL_RT"]
    if ctypes.util.find_library("mkl_rt"):
        return None
    roots = [sys.prefix, site.USER_BASE, "/usr/local", "/usr"]
    for root in roots:
        hits = sorted(glob.glob(f"{root}/lib*/**/libmkl_rt.so*", recursive=True), key=len)
        if hits:
            return hits[0]
    return None


def _load_pypardiso():
    path = _locate_mkl_rt()
    if path:
        os.environ.setdefault("PYPARDISO_MKL_RT", path)
    try:
        import pypardiso
    except (ImportError, OSError) as exc:
        log.debug("PARDISO unavailable: %s", exc)
        return None
    return pypardiso


_pypardiso = None
_probed = False


def available_backends() -> list[str]:
    global _pypardiso, _probed
    if not _probed:
        _pypardiso = _load_pypardiso()
        _probed = True
    return (["pardiso"] if _pypardiso is not None else []) + ["superlu"]


def default_backend() -> str:
    choice = os.environ.get("POROFEM_SOLVER")
    backends = available_backends()
    if choice:
        if choice not in backends:
            raise FactorizationError(f"solver backend {choice!r} not available (have {backends})")
        return choice
    return backends[0]


class PardisoFactor:
    """Real nonsymmetric PARDISO factorization; analysis reused across calls."""

    name = "pardiso"

    def __init__(self):
        available_backends()
        self._solver = _pypardiso.PyPardisoSolver(mtype=11)
        self._pattern = None

    def factorize(self, A: sp.csr_matrix):
        A = sp.csr_matrix(A)
        A.sort_indices()
        key = (A.shape, A.indptr.tobytes(), A.indices.tobytes())
        try:
            if key != self._pattern:
                self._solver.set_phase(11)
                self._solver._call_pardiso(A, np.zeros(A.shape[0]))
                self._pattern = key
            self._solver.set_phase(22)
            self._solver._call_pardiso(A, np.zeros(A.shape[0]))
        except _pypardiso.pardiso_wrapper.PyPardisoError as exc:
            raise FactorizationError(str(exc)) from exc
        self._A = A

    def solve(self, b: np.ndarray) -> np.ndarray:
        self._solver.set_phase(33)
        try:
            x = self._solver._call_pardiso(self._A, np.ascontiguousarray(b, dtype=np.float64))
        except _pypardiso.pardiso_wrapper.PyPardisoError as exc:
            raise FactorizationError(str(exc)) from exc
        return np.asarray(x).ravel()

    def close(self):
        self._solver.free_memory(everything=True)
        self._pattern = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class SuperLUFactor:
    name = "superlu"

    def factorize(self, A: sp.csr_matrix):
        A = sp.csr_matrix(A)
        # CSR arrays read as CSC describe A^T, so the transpose solve needs no conversion
        At = sp.csc_matrix((A.data, A.indices, A.indptr), shape=A.shape[::-1])
        try:
            self._lu = spla.splu(At, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=np.float64), trans="T")

    def close(self):
        self._lu = None


def make_factor(backend: str | None = None):
    backend = backend or default_backend()
    if backend == "pardiso":
        if "pardiso" not in available_backends():
            raise FactorizationError("PARDISO requested but pypardiso/MKL could not be loaded")
        return PardisoFactor()
    if backend == "superlu":
        return SuperLUFactor()
    raise FactorizationError(f"unknown solver backend {backend!r}")


def set_deterministic() -> None:
    """Pin MKL to one thread so repeated runs give bit-identical results.

    Multi-threaded PARDISO may reorder floating-point reductions between
    runs. The environment variable covers libraries loaded later; the
    explicit call covers an MKL runtime that is already loaded.
    """
    os.environ["MKL_NUM_THREADS"] = "1"
    os.environ["MKL_DYNAMIC"] = "FALSE"
    if "pardiso" not in available_backends():
        return
    path = os.environ.get("PYPARDISO_MKL_RT") or ctypes.util.find_library("mkl_rt")
    try:
        lib = ctypes.CDLL(path)
        lib.MKL_Set_Num_Threads(ctypes.c_int(1))
        lib.MKL_Set_Dynamic(ctypes.c_int(0))
    except (OSError, AttributeError, TypeError) as exc:
        log.warning("could not pin MKL threads: %s", exc)
