# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: bilinear rollout and grouped local-linear smoothing.

Signatures and return conventions match ``_pykernels``.
"""
import numpy as np
from libc.math cimport fabs, fmod, isfinite


def rollout_bilinear(double[:, ::1] A, double[:, ::1] Bv, double[:, ::1] Big,
                     long[::1] xu_k, long[::1] xu_r, long[::1] xu_c, double[::1] xu_v,
                     long[::1] vu_k, long[::1] vu_r, long[::1] vu_c, double[::1] vu_v,
                     double[::1] x0, double[:, ::1] U, double[:, ::1] V,
                     double[:, ::1] F):
    cdef Py_ssize_t T = U.shape[0]
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t nv = Bv.shape[1]
    cdef Py_ssize_t nf = Big.shape[1]
    cdef Py_ssize_t nxu = xu_v.shape[0]
    cdef Py_ssize_t nvu = vu_v.shape[0]
    out = np.empty((T + 1, n))
    cdef double[:, ::1] X = out
    cdef Py_ssize_t k, i, j, e
    cdef double acc
    cdef long bad = -1
    with nogil:
        for i in range(n):
            X[0, i] = x0[i]
        for k in range(T):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc = acc + A[i, j] * X[k, j]
                for j in range(nv):
                    acc = acc + Bv[i, j] * V[k, j]
                for j in range(nf):
                    acc = acc + Big[i, j] * F[k, j]
                X[k + 1, i] = acc
            for e in range(nxu):
                X[k + 1, xu_r[e]] += xu_v[e] * U[k, xu_k[e]] * X[k, xu_c[e]]
            for e in range(nvu):
                X[k + 1, vu_r[e]] += vu_v[e] * U[k, vu_k[e]] * V[k, vu_c[e]]
            for i in range(n):
                if not isfinite(X[k + 1, i]):
                    bad = k + 1
                    break
            if bad >= 0:
                break
    if bad >= 0:
        out[bad:] = np.nan
    return out, bad


def lwlr_grouped(double[::1] upos, double[::1] counts, double[:, ::1] sums,
                 double[::1] eval_pos, double bandwidth, double period):
    cdef Py_ssize_t E = eval_pos.shape[0]
    cdef Py_ssize_t P = upos.shape[0]
    cdef Py_ssize_t m = sums.shape[1]
    values_arr = np.full((E, m), np.nan)
    ok_arr = np.zeros(E, dtype=np.uint8)
    t0_arr = np.empty(m)
    t1_arr = np.empty(m)
    cdef double[:, ::1] values = values_arr
    cdef unsigned char[::1] ok = ok_arr
    cdef double[::1] t0 = t0_arr
    cdef double[::1] t1 = t1_arr
    cdef Py_ssize_t e, j, c
    cdef double d, r, w, wc, s0, s1, s2, den
    cdef long distinct
    cdef double half = 0.5 * period
    with nogil:
        for e in range(E):
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            distinct = 0
            for c in range(m):
                t0[c] = 0.0
                t1[c] = 0.0
            for j in range(P):
                d = upos[j] - eval_pos[e]
                if period > 0:
                    d = fmod(d + half, period)
                    if d < 0:
                        d = d + period
                    d = d - half
                r = fabs(d) / bandwidth
                if r >= 1.0:
                    continue
                w = 1.0 - r * r * r
                w = w * w * w
                if w <= 0.0:
                    continue
                distinct += 1
                wc = w * counts[j]
                s0 += wc
                s1 += wc * d
                s2 += wc * d * d
                for c in range(m):
                    t0[c] += w * sums[j, c]
                    t1[c] += w * d * sums[j, c]
            den = s0 * s2 - s1 * s1
            if distinct >= 2 and den > 0:
                ok[e] = 1
                for c in range(m):
                    values[e, c] = (s2 * t0[c] - s1 * t1[c]) / den
    return values_arr, ok_arr.astype(bool)
