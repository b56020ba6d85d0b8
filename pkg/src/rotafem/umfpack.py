"""ctypes binding to the system UMFPACK library (``umfpack_di_*``, int32 indices).

UMFPACK is loaded lazily.  Some OpenBLAS builds select a faulty kernel on
recent CPUs, which makes UMFPACK return wrong factors without any error.
Before loading, a tiny probe factorization runs in a subprocess; if it fails
with the default settings but passes with ``OPENBLAS_CORETYPE=Haswell``, that
setting is exported for this process.  When no working configuration exists
the library is reported as unavailable and callers fall back to SuperLU.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os
import subprocess
import sys

import numpy as np

log = logging.getLogger(__name__)

UMFPACK_A = 0
CONTROL = 20
INFO = 90
STATUS_OK = 0
WARNING_SINGULAR = 1
_IRSTEP = 7
_ORDERING = 10
_ORDERING_CHOLMOD = 0  # best of AMD/COLAMD and METIS
_RCOND = 67

FALLBACK_CORETYPE = "Haswell"

# Pure-ctypes self test: factor a few fixed pseudo-random systems with dense
# fronts and check the residuals.  It runs in a child process so the BLAS
# kernel choice can differ from the current one.
_PROBE = r"""
import ctypes, sys
lib = ctypes.CDLL(sys.argv[1])
def check(n, every, seed):
    Ap, Ai, Ax = [0], [], []
    for j in range(n):
        for i in range(n):
            seed = (1103515245 * seed + 12345) % 2**31
            if i == j or seed % every == 0:
                Ai.append(i); Ax.append(3.0 if i == j else (seed % 1000) / 1000.0)
        Ap.append(len(Ai))
    I = ctypes.c_int * len(Ap); J = ctypes.c_int * len(Ai); D = ctypes.c_double * len(Ax)
    ap, ai, ax = I(*Ap), J(*Ai), D(*Ax)
    b = (ctypes.c_double * n)(*[1.0] * n); x = (ctypes.c_double * n)()
    sym, num = ctypes.c_void_p(), ctypes.c_void_p()
    ok = lib.umfpack_di_symbolic(n, n, ap, ai, ax, ctypes.byref(sym), None, None) == 0
    ok = ok and lib.umfpack_di_numeric(ap, ai, ax, sym, ctypes.byref(num), None, None) == 0
    ok = ok and lib.umfpack_di_solve(0, ap, ai, ax, x, b, num, None, None) == 0
    r = [-1.0] * n
    for j in range(n):
        for p in range(Ap[j], Ap[j + 1]):
            r[Ai[p]] += Ax[p] * x[j]
    return ok and max(abs(v) for v in r) < 1e-8
sys.exit(0 if all(check(n, e, s) for n, e, s in [(200, 20, 1), (300, 10, 7), (60, 3, 11)]) else 1)
"""


class UmfpackError(RuntimeError):
    """UMFPACK returned an error status."""


def _probe(path: str, env: dict) -> bool:
    try:
        res = subprocess.run([sys.executable, "-c", _PROBE, path], env=env,
                             capture_output=True, timeout=60)
    except (OSError, subprocess.SubprocessError):
        return False
    return res.returncode == 0


def _find_library() -> str:
    # Loading happens only in the probe: the BLAS kernel is chosen when the
    # library is first mapped into a process.
    return ctypes.util.find_library("umfpack") or "libumfpack.so.5"


class _Library:
    def __init__(self, path: str):
        lib = ctypes.CDLL(path)
        i, vp = ctypes.c_int, ctypes.c_void_p
        ip, dp = ctypes.POINTER(ctypes.c_int), ctypes.POINTER(ctypes.c_double)
        lib.umfpack_di_defaults.argtypes = [dp]
        lib.umfpack_di_symbolic.argtypes = [i, i, ip, ip, dp, ctypes.POINTER(vp), dp, dp]
        lib.umfpack_di_numeric.argtypes = [ip, ip, dp, vp, ctypes.POINTER(vp), dp, dp]
        lib.umfpack_di_solve.argtypes = [i, ip, ip, dp, dp, dp, vp, dp, dp]
        lib.umfpack_di_get_lunz.argtypes = [ip, ip, ip, ip, ip, vp]
        lib.umfpack_di_get_numeric.argtypes = [ip, ip, dp, ip, ip, dp, ip, ip, dp, ip, dp, vp]
        lib.umfpack_di_free_symbolic.argtypes = [ctypes.POINTER(vp)]
        lib.umfpack_di_free_numeric.argtypes = [ctypes.POINTER(vp)]
        for name in ("symbolic", "numeric", "solve", "get_lunz", "get_numeric"):
            getattr(lib, f"umfpack_di_{name}").restype = i
        self.lib = lib
        self.path = path


_LOADED: list = []


def load() -> _Library | None:
    """The UMFPACK binding, or None when no working library is found."""
    if _LOADED:
        return _LOADED[0]
    lib = None
    path = _find_library()
    env = dict(os.environ)
    if _probe(path, env):
        lib = _Library(path)
    elif "OPENBLAS_CORETYPE" not in env and _probe(
            path, {**env, "OPENBLAS_CORETYPE": FALLBACK_CORETYPE}):
        os.environ["OPENBLAS_CORETYPE"] = FALLBACK_CORETYPE
        lib = _Library(path)
        log.info("UMFPACK: using OPENBLAS_CORETYPE=%s", FALLBACK_CORETYPE)
    else:
        log.info("no working UMFPACK library (%s); using SuperLU", path)
    _LOADED.append(lib)
    return lib


def available() -> bool:
    return load() is not None


def _ptr(a, ctype):
    return a.ctypes.data_as(ctypes.POINTER(ctype))


class Factor:
    """LU factorization ``P R A Q = L U`` of a square CSC matrix.

    Attributes ``udiag`` (diagonal of U, scaled system) and ``colperm``
    (column permutation Q) locate singular pivots.
    """

    def __init__(self, A):
        lib = load()
        if lib is None:
            raise UmfpackError("UMFPACK is not available")
        self._lib = lib.lib
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        self.Ap = np.ascontiguousarray(A.indptr, dtype=np.int32)
        self.Ai = np.ascontiguousarray(A.indices, dtype=np.int32)
        self.Ax = np.ascontiguousarray(A.data, dtype=np.float64)
        self.control = np.zeros(CONTROL)
        self._lib.umfpack_di_defaults(_ptr(self.control, ctypes.c_double))
        self.control[_IRSTEP] = 0  # the caller refines against the original matrix
        self.control[_ORDERING] = _ORDERING_CHOLMOD
        info = np.zeros(INFO)
        dbl, cint = ctypes.c_double, ctypes.c_int
        sym = ctypes.c_void_p()
        self._numeric = ctypes.c_void_p()
        st = self._lib.umfpack_di_symbolic(n, n, _ptr(self.Ap, cint), _ptr(self.Ai, cint),
                                           _ptr(self.Ax, dbl), ctypes.byref(sym),
                                           _ptr(self.control, dbl), _ptr(info, dbl))
        if st != STATUS_OK:
            raise UmfpackError(f"symbolic analysis failed with status {st}")
        try:
            st = self._lib.umfpack_di_numeric(_ptr(self.Ap, cint), _ptr(self.Ai, cint),
                                              _ptr(self.Ax, dbl), sym, ctypes.byref(self._numeric),
                                              _ptr(self.control, dbl), _ptr(info, dbl))
        finally:
            self._lib.umfpack_di_free_symbolic(ctypes.byref(sym))
        if st not in (STATUS_OK, WARNING_SINGULAR):
            self.free()
            raise UmfpackError(f"numeric factorization failed with status {st}")
        self.rcond = float(info[_RCOND])
        lnz, unz, nr, nc, nzd = (ctypes.c_int() for _ in range(5))
        self._lib.umfpack_di_get_lunz(ctypes.byref(lnz), ctypes.byref(unz), ctypes.byref(nr),
                                      ctypes.byref(nc), ctypes.byref(nzd), self._numeric)
        self.nnz = lnz.value + unz.value
        self.udiag = np.zeros(n)
        self.colperm = np.zeros(n, dtype=np.int32)
        null_i, null_d = ctypes.POINTER(cint)(), ctypes.POINTER(dbl)()
        self._lib.umfpack_di_get_numeric(null_i, null_i, null_d, null_i, null_i, null_d, null_i,
                                         _ptr(self.colperm, cint), _ptr(self.udiag, dbl),
                                         null_i, null_d, self._numeric)

    def solve(self, b):
        b = np.ascontiguousarray(b, dtype=np.float64)
        x = np.empty_like(b)
        info = np.zeros(INFO)
        dbl, cint = ctypes.c_double, ctypes.c_int
        st = self._lib.umfpack_di_solve(UMFPACK_A, _ptr(self.Ap, cint), _ptr(self.Ai, cint),
                                        _ptr(self.Ax, dbl), _ptr(x, dbl), _ptr(b, dbl),
                                        self._numeric, _ptr(self.control, dbl), _ptr(info, dbl))
        if st not in (STATUS_OK, WARNING_SINGULAR):
            raise UmfpackError(f"solve failed with status {st}")
        return x

    def free(self):
        if self._numeric:
            self._lib.umfpack_di_free_numeric(ctypes.byref(self._numeric))
            self._numeric = ctypes.c_void_p()

    def __del__(self):
        try:
            self.free()
        except Exception:  # interpreter shutdown
            pass
