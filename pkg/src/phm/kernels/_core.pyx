# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled structured-matvec kernels.

Same call signatures and index conventions as ``fallback``; see that
module's docstring.  Loops run per summand h with one reusable
(B, n, max(k, d)/n) scratch buffer, so the working set stays an order of
magnitude below the fallback's einsum buffers and two orders below the
dense (k, d) matrix.  Reduction order is fixed (ascending indices), which
keeps results bit-stable between runs.
"""

import numpy as np

from .alloc import tracked_empty

NAME = "compiled"


def kron2(double[:, ::1] x, double[:, ::1] y):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t p = y.shape[0], q = y.shape[1]
    out_arr = tracked_empty((m * p, n * q))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, r, c
    cdef double xv
    with nogil:
        for i in range(m):
            for j in range(n):
                xv = x[i, j]
                for r in range(p):
                    for c in range(q):
                        out[i * p + r, j * q + c] = xv * y[r, c]
    return out_arr


def compose(double[:, :, ::1] A, double[:, :, ::1] S):
    cdef Py_ssize_t n = S.shape[0], kn = S.shape[1], dn = S.shape[2]
    out_arr = tracked_empty((n * kn, n * dn))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t h, i, j, r, c
    cdef double a
    out_arr[...] = 0.0
    with nogil:
        for i in range(n):
            for j in range(n):
                for h in range(n):
                    a = A[h, i, j]
                    if a == 0.0:
                        continue
                    for r in range(kn):
                        for c in range(dn):
                            out[i * kn + r, j * dn + c] += a * S[h, r, c]
    return out_arr


def apply_forward(double[:, :, ::1] A, double[:, :, ::1] S, double[:, :, ::1] x2):
    cdef Py_ssize_t n = S.shape[0], kn = S.shape[1], dn = S.shape[2]
    cdef Py_ssize_t B = x2.shape[0]
    tmp_arr = tracked_empty((B, n, kn))
    y2_arr = tracked_empty((B, n, kn))
    y2_arr[...] = 0.0
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] y2 = y2_arr
    cdef Py_ssize_t h, b, i, j, r, c
    cdef double acc, a
    with nogil:
        for h in range(n):
            # tmp[b,j,r] = sum_c x2[b,j,c] * S[h,r,c]
            for b in range(B):
                for j in range(n):
                    for r in range(kn):
                        acc = 0.0
                        for c in range(dn):
                            acc += x2[b, j, c] * S[h, r, c]
                        tmp[b, j, r] = acc
            # y2[b,i,r] += A[h,i,j] * tmp[b,j,r]
            for b in range(B):
                for i in range(n):
                    for j in range(n):
                        a = A[h, i, j]
                        if a == 0.0:
                            continue
                        for r in range(kn):
                            y2[b, i, r] += a * tmp[b, j, r]
    return y2_arr


def apply_grad_x(double[:, :, ::1] A, double[:, :, ::1] S, double[:, :, ::1] g2):
    cdef Py_ssize_t n = S.shape[0], kn = S.shape[1], dn = S.shape[2]
    cdef Py_ssize_t B = g2.shape[0]
    tmp_arr = tracked_empty((B, n, dn))
    dx2_arr = tracked_empty((B, n, dn))
    dx2_arr[...] = 0.0
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] dx2 = dx2_arr
    cdef Py_ssize_t h, b, i, j, r, c
    cdef double acc, a
    with nogil:
        for h in range(n):
            # tmp[b,i,c] = sum_r g2[b,i,r] * S[h,r,c]
            for b in range(B):
                for i in range(n):
                    for c in range(dn):
                        acc = 0.0
                        for r in range(kn):
                            acc += g2[b, i, r] * S[h, r, c]
                        tmp[b, i, c] = acc
            # dx2[b,j,c] += A[h,i,j] * tmp[b,i,c]
            for b in range(B):
                for i in range(n):
                    for j in range(n):
                        a = A[h, i, j]
                        if a == 0.0:
                            continue
                        for c in range(dn):
                            dx2[b, j, c] += a * tmp[b, i, c]
    return dx2_arr


def apply_grad_a(double[:, :, ::1] S, double[:, :, ::1] g2, double[:, :, ::1] x2):
    cdef Py_ssize_t n = S.shape[0], kn = S.shape[1], dn = S.shape[2]
    cdef Py_ssize_t B = x2.shape[0]
    tmp_arr = tracked_empty((B, n, kn))
    dA_arr = tracked_empty((n, n, n))
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] dA = dA_arr
    cdef Py_ssize_t h, b, i, j, r, c
    cdef double acc
    with nogil:
        for h in range(n):
            # tmp[b,j,r] = sum_c x2[b,j,c] * S[h,r,c]
            for b in range(B):
                for j in range(n):
                    for r in range(kn):
                        acc = 0.0
                        for c in range(dn):
                            acc += x2[b, j, c] * S[h, r, c]
                        tmp[b, j, r] = acc
            # dA[h,i,j] = sum_{b,r} g2[b,i,r] * tmp[b,j,r]
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for b in range(B):
                        for r in range(kn):
                            acc += g2[b, i, r] * tmp[b, j, r]
                    dA[h, i, j] = acc
    return dA_arr


def apply_grad_s(double[:, :, ::1] A, double[:, :, ::1] g2, double[:, :, ::1] x2):
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t B = g2.shape[0], kn = g2.shape[2], dn = x2.shape[2]
    tmp_arr = tracked_empty((B, n, kn))
    dS_arr = tracked_empty((n, kn, dn))
    dS_arr[...] = 0.0
    cdef double[:, :, ::1] tmp = tmp_arr
    cdef double[:, :, ::1] dS = dS_arr
    cdef Py_ssize_t h, b, i, j, r, c
    cdef double a, tv
    with nogil:
        for h in range(n):
            # tmp[b,j,r] = sum_i A[h,i,j] * g2[b,i,r]
            for b in range(B):
                for j in range(n):
                    for r in range(kn):
                        tmp[b, j, r] = 0.0
                for i in range(n):
                    for j in range(n):
                        a = A[h, i, j]
                        if a == 0.0:
                            continue
                        for r in range(kn):
                            tmp[b, j, r] += a * g2[b, i, r]
            # dS[h,r,c] += tmp[b,j,r] * x2[b,j,c]
            for b in range(B):
                for j in range(n):
                    for r in range(kn):
                        tv = tmp[b, j, r]
                        if tv == 0.0:
                            continue
                        for c in range(dn):
                            dS[h, r, c] += tv * x2[b, j, c]
    return dS_arr
