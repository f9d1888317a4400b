"""Dense float64 tensors with reverse-mode differentiation.

The graph is define-by-run: each operation returns a new Tensor that
remembers its parents and a closure computing the parents' gradient
contributions from the output gradient.  ``backward`` walks the recorded
graph once in reverse topological order and accumulates gradients into the
``grad`` buffer of every reachable leaf, summing over all paths.  Values
are immutable after creation except for leaf ``grad`` buffers and in-place
optimizer updates between graphs.

Everything is float64.  The structured-layer equivalence checks in this
package assert near machine precision, so exactness wins over speed.
"""

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "GraphError", "set_strict_finite",
    "tensor", "constant",
    "add", "add_bias", "sub", "mul", "neg", "scale",
    "matmul", "linear", "kron",
    "sigmoid", "tanh", "relu",
    "softmax_lastdim", "split_lastdim", "concat_lastdim",
    "reshape", "permute", "sum_all", "mean_all",
    "cross_entropy", "layer_norm", "embedding", "dropout",
    "backward", "zero_grad",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Autodiff contract violation (non-scalar loss, missing grad, ...)."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf while strict checking is on."""


_STRICT_FINITE = False


def set_strict_finite(flag: bool) -> bool:
    """Toggle NaN/Inf checking after every forward op; returns old value.

    Off by default: training loops check their scalar loss instead, which
    catches divergence without a full-array scan per op.
    """
    global _STRICT_FINITE
    old = _STRICT_FINITE
    _STRICT_FINITE = bool(flag)
    return old


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    Leaves are created directly (parameters and inputs); interior nodes
    are created by ops and carry ``_parents`` plus a ``_backward`` closure.
    Only leaves accumulate into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A graph-free view of this tensor's value."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; all strict, no implicit broadcasting
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _record(data, parents, backward_fn) -> Tensor:
    """Create an op output, recording the edge only if a parent needs grad."""
    if _STRICT_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError("forward op produced NaN or Inf")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor):
    """Parents-before-children ordering of the graph reachable from root."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls without zeroing add up (gradient accumulation).
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor with requires_grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# pointwise and affine ops
# ---------------------------------------------------------------------------

def _require_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, alpha: float) -> Tensor:
    alpha = float(alpha)
    return _record(a.data * alpha, (a,), lambda g: (g * alpha,))


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` of length k to the last dimension of ``a``."""
    if b.data.ndim != 1 or a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: cannot add {b.data.shape} onto {a.data.shape}")

    def _bwd(g):
        gb = g.reshape(-1, b.data.shape[0]).sum(axis=0)
        return g, gb

    return _record(a.data + b.data, (a, b), _bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supports 2D x 2D, batched with identical leading dims, and
    (batched) x 2D.  Gradient contract: dL/da = g @ b^T, dL/db = a^T @ g
    (summed over batch where b is unbatched).
    """
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2:
        raise ShapeError("matmul: operands must have rank >= 2")
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul: inner dims {A.shape[-1]} and {B.shape[-2]} differ")
    if A.ndim == B.ndim:
        if A.shape[:-2] != B.shape[:-2]:
            raise ShapeError(f"matmul: batch dims {A.shape[:-2]} and {B.shape[:-2]} differ")
    elif B.ndim != 2:
        raise ShapeError("matmul: only 2D right operands broadcast over batches")
    out = A @ B

    def _bwd(g):
        ga = g @ np.swapaxes(B, -1, -2)
        if B.ndim == A.ndim:
            gb = np.swapaxes(A, -1, -2) @ g
        else:
            a2 = A.reshape(-1, A.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            gb = a2.T @ g2
        return ga, gb

    return _record(out, (a, b), _bwd)


def linear(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """y = x @ w^T (+ b), with x of shape (..., d) and w of shape (k, d)."""
    if w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear: inputs {x.data.shape} incompatible with weight {w.data.shape}")
    out = x.data @ w.data.T
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ShapeError(f"linear: bias shape {b.data.shape} != ({w.data.shape[0]},)")
        out = out + b.data

    def _bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        gx = g @ w.data
        gw = g2.T @ x2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, _bwd)


def kron(x: Tensor, y: Tensor) -> Tensor:
    """Kronecker product of two matrices.

    Block (i, j) of the result is x[i, j] * y, so shapes (m, n) and (p, q)
    produce (m*p, n*q).  Gradients flow to both factors.
    """
    if x.data.ndim != 2 or y.data.ndim != 2:
        raise ShapeError(f"kron: rank-2 operands required, got ranks {x.data.ndim} and {y.data.ndim}")
    from . import kernels
    out = kernels.kron2(x.data, y.data)
    m, n = x.data.shape
    p, q = y.data.shape

    def _bwd(g):
        g4 = g.reshape(m, p, n, q)
        gx = np.einsum("ipjq,pq->ij", g4, y.data)
        gy = np.einsum("ipjq,ij->pq", g4, x.data)
        return gx, gy

    return _record(out, (x, y), _bwd)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    return _record(y, (a,), lambda g: (g * (a.data > 0),))


def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last dimension, stabilized by max subtraction."""
    if a.data.shape[-1] < 1:
        raise ShapeError("softmax_lastdim: empty last dimension")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def _bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _record(y, (a,), _bwd)


# ---------------------------------------------------------------------------
# shape surgery
# ---------------------------------------------------------------------------

def narrow_lastdim(a: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous slice [lo, hi) along the last dimension."""
    if not (0 <= lo < hi <= a.data.shape[-1]):
        raise ShapeError(f"narrow_lastdim: [{lo}, {hi}) out of range for {a.data.shape}")
    out = a.data[..., lo:hi].copy()

    def _bwd(g):
        full = np.zeros_like(a.data)
        full[..., lo:hi] = g
        return (full,)

    return _record(out, (a,), _bwd)


def split_lastdim(a: Tensor, ways: int):
    """Split into ``ways`` equal contiguous chunks along the last dimension."""
    d = a.data.shape[-1]
    if ways < 1 or d % ways != 0:
        raise ShapeError(f"split_lastdim: {ways} does not divide last dim {d}")
    w = d // ways
    return [narrow_lastdim(a, i * w, (i + 1) * w) for i in range(ways)]


def concat_lastdim(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_lastdim: empty input")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise ShapeError("concat_lastdim: leading dims differ")
    widths = [p.data.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)

    def _bwd(g):
        gs = []
        lo = 0
        for w in widths:
            gs.append(g[..., lo:lo + w])
            lo += w
        return tuple(gs)

    return _record(out, tuple(parts), _bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean())
    return _record(out, (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),))


def cross_entropy(logits: Tensor, target_ids: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    ``logits`` has shape (..., V); ``target_ids`` is an integer array of
    the leading shape.  Fused log-sum-exp keeps the forward stable.
    """
    ids = np.asarray(target_ids)
    if ids.shape != logits.data.shape[:-1]:
        raise ShapeError(f"cross_entropy: target shape {ids.shape} != {logits.data.shape[:-1]}")
    v = logits.data.shape[-1]
    flat = logits.data.reshape(-1, v)
    idx = ids.reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ShapeError("cross_entropy: target id out of range")
    m = flat.max(axis=1, keepdims=True)
    e = np.exp(flat - m)
    lse = m[:, 0] + np.log(e.sum(axis=1))
    n = flat.shape[0]
    out = np.asarray((lse - flat[np.arange(n), idx]).mean())

    def _bwd(g):
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        return ((float(g) / n) * p.reshape(logits.data.shape),)

    return _record(out, (logits,), _bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError("layer_norm: gamma/beta must match the last dimension")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def _bwd(g):
        gxhat = g * gamma.data
        s1 = gxhat.sum(axis=-1, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=-1, keepdims=True)
        gx = (inv / d) * (d * gxhat - s1 - xhat * s2)
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), _bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: output shape ids.shape + (d,)."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError("embedding: table must be rank 2")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError("embedding: id out of range")
    out = table.data[ids]

    def _bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _record(out, (table,), _bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout: rate must be < 1")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))
