"""Numpy implementations of the structured-matvec kernels.

These mirror the compiled core exactly at the call-signature level and are
selected automatically when the extension is unavailable (or forced via
PHM_PURE_PYTHON=1).  All temporaries are allocated through
:func:`~phm.kernels.alloc.tracked_empty` and filled with two-operand
einsum calls so the memory profile is explicit: applying a layer of n
summands to a batch of B vectors never materializes the dense (k, d)
matrix, only a (B, n, n, max(k, d)/n) contraction buffer.

Index conventions shared with the compiled core:
    A: (n, n, n)     stacked rule matrices, A[h] is summand h
    S: (n, k/n, d/n) stacked weight blocks
    x2: (B, n, d/n)  inputs, row-major unstacking of each length-d vector
    y2: (B, n, k/n)  outputs, y[b, i*k/n + r] = y2[b, i, r]
"""

import numpy as np

from .alloc import tracked_empty

NAME = "numpy"


def kron2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Kronecker product of two 2D arrays."""
    m, n = x.shape
    p, q = y.shape
    out = tracked_empty((m * p, n * q))
    np.einsum("ij,rc->irjc", x, y, out=out.reshape(m, p, n, q))
    return out


def compose(A: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Dense sum of Kronecker products: H[i*kn+r, j*dn+c] = sum_h A[h,i,j]*S[h,r,c].

    Terms accumulate in ascending h so the result is bit-identical to the
    compiled core and to the column-wise construction under the exact
    parameter mapping.
    """
    n, kn, dn = S.shape
    out = tracked_empty((n * kn, n * dn))
    out4 = out.reshape(n, kn, n, dn)
    np.einsum("ij,rc->irjc", A[0], S[0], out=out4)
    for h in range(1, n):
        out4 += np.einsum("ij,rc->irjc", A[h], S[h])
    return out


def apply_forward(A: np.ndarray, S: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """y2[b,i,r] = sum_{h,j,c} A[h,i,j] * S[h,r,c] * x2[b,j,c]."""
    n, kn, dn = S.shape
    b = x2.shape[0]
    tmp = tracked_empty((b, n, n, kn))
    np.einsum("hrc,bjc->bhjr", S, x2, out=tmp)
    y2 = tracked_empty((b, n, kn))
    np.einsum("hij,bhjr->bir", A, tmp, out=y2)
    return y2


def apply_grad_x(A: np.ndarray, S: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """dx2[b,j,c] = sum_{h,i,r} A[h,i,j] * S[h,r,c] * g2[b,i,r]."""
    n, kn, dn = S.shape
    b = g2.shape[0]
    tmp = tracked_empty((b, n, n, dn))
    np.einsum("hrc,bir->bhic", S, g2, out=tmp)
    dx2 = tracked_empty((b, n, dn))
    np.einsum("hij,bhic->bjc", A, tmp, out=dx2)
    return dx2


def apply_grad_a(S: np.ndarray, g2: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """dA[h,i,j] = sum_{b,r,c} g2[b,i,r] * S[h,r,c] * x2[b,j,c]."""
    n, kn, dn = S.shape
    b = x2.shape[0]
    tmp = tracked_empty((b, n, n, kn))
    np.einsum("hrc,bjc->bhjr", S, x2, out=tmp)
    dA = tracked_empty((n, n, n))
    np.einsum("bir,bhjr->hij", g2, tmp, out=dA)
    return dA


def apply_grad_s(A: np.ndarray, g2: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """dS[h,r,c] = sum_{b,i,j} A[h,i,j] * g2[b,i,r] * x2[b,j,c]."""
    n = A.shape[0]
    b, _, kn = g2.shape
    dn = x2.shape[2]
    tmp = tracked_empty((b, n, n, kn))
    np.einsum("hij,bir->bhjr", A, g2, out=tmp)
    dS = tracked_empty((n, kn, dn))
    np.einsum("bhjr,bjc->hrc", tmp, x2, out=dS)
    return dS
