# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the _kernels functions.

Semantics match _kernels.py; only the evaluation strategy differs (fused
loops instead of temporaries).  Results may differ from the numpy versions
in the last bits because summation order differs; each backend is
deterministic on its own.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

__all__ = ["project_soc", "soft_threshold"]


def project_soc(cnp.ndarray[cnp.float64_t, ndim=3] arr):
    cdef double[:, :, :] a = arr
    cdef Py_ssize_t nb = a.shape[0], nc = a.shape[1], nm = a.shape[2]
    cdef Py_ssize_t j, c, m
    cdef double t, nx, half, scale, v
    for j in range(nb):
        for m in range(nm):
            t = a[j, 0, m]
            nx = 0.0
            for c in range(1, nc):
                v = a[j, c, m]
                nx += v * v
            nx = sqrt(nx)
            if nx <= t:
                continue
            if nx <= -t:
                a[j, 0, m] = 0.0
                for c in range(1, nc):
                    a[j, c, m] = 0.0
            else:
                half = 0.5 * (t + nx)
                scale = half / nx if nx > 0.0 else 0.0
                a[j, 0, m] = half
                for c in range(1, nc):
                    a[j, c, m] *= scale
    return arr


def soft_threshold(
    cnp.ndarray[cnp.float64_t, ndim=2] x,
    cnp.ndarray[cnp.float64_t, ndim=1] thresh,
):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty_like(x)
    cdef double[:, :] xv = x
    cdef double[:] tv = thresh
    cdef double[:, :] ov = out
    cdef Py_ssize_t n0 = xv.shape[0], n1 = xv.shape[1]
    cdef Py_ssize_t i, j
    cdef double v, t
    for i in range(n0):
        t = tv[i]
        for j in range(n1):
            v = xv[i, j]
            if v > t:
                ov[i, j] = v - t
            elif v < -t:
                ov[i, j] = v + t
            else:
                ov[i, j] = 0.0
    return out
