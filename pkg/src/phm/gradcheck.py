"""Finite-difference gradient verification.

The oracle path evaluates the loss function forward-only, perturbing one
element at a time with central differences, so it shares nothing with the
reverse-mode machinery it checks.
"""

import numpy as np

from .tensor import Tensor, backward, zero_grad


def finite_difference_grad(loss_fn, t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d loss_fn() / d t via central differences, one element at a time."""
    base = t.data
    fd = np.zeros_like(base)
    flat = base.reshape(-1)
    out = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(loss_fn().data)
        flat[i] = orig - eps
        lo = float(loss_fn().data)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return fd


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Max abs difference normalized by the largest reference magnitude."""
    scale = max(float(np.max(np.abs(reference))), 1e-8)
    return float(np.max(np.abs(analytic - reference))) / scale


def check_gradients(loss_fn, tensors, eps: float = 1e-5) -> dict:
    """Compare reverse-mode grads of ``loss_fn()`` against finite differences.

    ``tensors`` maps names to leaf Tensors the loss depends on.  Returns
    per-name relative errors; the caller asserts the tolerance.
    """
    tensors = dict(tensors)
    zero_grad(tensors.values())
    loss = loss_fn()
    backward(loss)
    errs = {}
    for name, t in tensors.items():
        if t.grad is None:
            raise AssertionError(f"{name}: no gradient reached this leaf")
        fd = finite_difference_grad(loss_fn, t, eps=eps)
        errs[name] = relative_error(t.grad, fd)
    return errs
