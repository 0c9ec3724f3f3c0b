# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Must agree with ``_pykernels`` to the last bit where
the arithmetic order is the same, and to ~1e-15 otherwise."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def latest_stamp(const long long[::1] frame, const long long[::1] stamp,
                 const long long[::1] x, const long long[::1] y,
                 const signed char[::1] p, Py_ssize_t num_frames,
                 Py_ssize_t height, Py_ssize_t width):
    out_arr = np.zeros((num_frames, 2, height, width), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, n = frame.shape[0]
    cdef int c
    cdef double v
    for i in range(n):
        c = 0 if p[i] > 0 else 1
        v = <double>stamp[i]
        if v > out[frame[i], c, y[i], x[i]]:
            out[frame[i], c, y[i], x[i]] = v
    return out_arr


def scan_forward(const double[:, :, ::1] u, const double[:, ::1] delta,
                 const double[:, :, ::1] Bm, const double[:, :, ::1] Cm,
                 const double[:, ::1] A):
    cdef Py_ssize_t nb = u.shape[0], N = u.shape[1], F = u.shape[2], S = A.shape[1]
    y_arr = np.zeros((nb, N, F), dtype=np.float64)
    hs_arr = np.zeros((nb, N, F, S), dtype=np.float64)
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] hs = hs_arr
    cdef Py_ssize_t b, t, f, s
    cdef double d, a, ab, hp, h, acc
    for b in range(nb):
        for t in range(N):
            d = delta[b, t]
            for f in range(F):
                acc = 0.0
                for s in range(S):
                    a = A[f, s]
                    ab = exp(d * a)
                    hp = hs[b, t - 1, f, s] if t > 0 else 0.0
                    h = ab * hp + ((ab - 1.0) / a) * Bm[b, t, s] * u[b, t, f]
                    hs[b, t, f, s] = h
                    acc = acc + Cm[b, t, s] * h
                y[b, t, f] = acc
    return y_arr, hs_arr


def scan_backward(const double[:, :, ::1] gy, const double[:, :, ::1] u,
                  const double[:, ::1] delta, const double[:, :, ::1] Bm,
                  const double[:, :, ::1] Cm, const double[:, ::1] A,
                  const double[:, :, :, ::1] hs):
    cdef Py_ssize_t nb = u.shape[0], N = u.shape[1], F = u.shape[2], S = A.shape[1]
    gu_arr = np.zeros((nb, N, F), dtype=np.float64)
    gd_arr = np.zeros((nb, N), dtype=np.float64)
    gB_arr = np.zeros((nb, N, S), dtype=np.float64)
    gC_arr = np.zeros((nb, N, S), dtype=np.float64)
    gA_arr = np.zeros((F, S), dtype=np.float64)
    gh_arr = np.zeros((F, S), dtype=np.float64)
    cdef double[:, :, ::1] gu = gu_arr
    cdef double[:, ::1] gd = gd_arr
    cdef double[:, :, ::1] gB = gB_arr
    cdef double[:, :, ::1] gC = gC_arr
    cdef double[:, ::1] gA = gA_arr
    cdef double[:, ::1] gh = gh_arr
    cdef Py_ssize_t b, t, f, s
    cdef double d, a, ab, e, hp, g, gab, ge, uf, gyf
    for b in range(nb):
        gh[:, :] = 0.0
        for t in range(N - 1, -1, -1):
            d = delta[b, t]
            for f in range(F):
                uf = u[b, t, f]
                gyf = gy[b, t, f]
                for s in range(S):
                    a = A[f, s]
                    ab = exp(d * a)
                    e = (ab - 1.0) / a
                    hp = hs[b, t - 1, f, s] if t > 0 else 0.0
                    g = gh[f, s] + gyf * Cm[b, t, s]
                    gC[b, t, s] += gyf * hs[b, t, f, s]
                    gab = g * hp
                    ge = g * Bm[b, t, s] * uf
                    gB[b, t, s] += g * e * uf
                    gu[b, t, f] += g * e * Bm[b, t, s]
                    gd[b, t] += gab * ab * a + ge * ab
                    gA[f, s] += gab * ab * d + ge * (d * ab * a - ab + 1.0) / (a * a)
                    gh[f, s] = g * ab
    return gu_arr, gd_arr, gB_arr, gC_arr, gA_arr
