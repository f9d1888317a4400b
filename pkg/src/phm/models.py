"""Toy sequence models built on Kronecker-sum layers.

Two hosts exercise the layer inside real architectures: a gated recurrent
cell whose input and recurrent transforms are both structured, and an
encoder-decoder attention stack where every projection (qkv, head mixing,
cross attention, feed-forward) is structured.  Embeddings and the output
vocabulary projection stay dense.

Residual connections and pre-sublayer normalization are used throughout;
the structured layers replace the linear maps inside the standard
architecture, they do not change its skeleton.
"""

import math
from dataclasses import dataclass

import numpy as np

from .layer import PhmParams, phm_forward, phm_init, phm_param_count
from .rng import make_rng
from .tensor import (
    ShapeError, Tensor, add, add_bias, concat_lastdim, cross_entropy,
    dropout, embedding, layer_norm, linear, matmul, mul, permute, relu,
    reshape, scale, sigmoid, softmax_lastdim, split_lastdim, tanh,
)

__all__ = [
    "PhmLstmCell", "lstm_forward", "ModelConfig", "PhmTransformer",
    "single_head_attention", "multi_head_attention", "ffn_forward",
    "count_transformer_params", "sinusoidal_positions",
    "PAD_ID", "BOS_ID", "EOS_ID",
]

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2


# ---------------------------------------------------------------------------
# gated recurrent cell
# ---------------------------------------------------------------------------

class PhmLstmCell:
    """LSTM cell with structured input and recurrent transforms.

    One combined pre-activation y = PHM(x_t) + PHM(h_prev) + b is split
    four ways into (forget, input, output, candidate), in that order.  The
    inner layers carry no bias; the cell holds the single shared one.

    ``literal_output_gate`` selects h_t = o_t * c_t with no activations on
    the output path; the default applies the usual sigmoid/tanh pair.
    """

    def __init__(self, input_dim: int, hidden_dim: int, n: int, seed: int,
                 literal_output_gate: bool = False):
        rng = make_rng(seed)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.n = n
        self.literal_output_gate = literal_output_gate
        self.phm_x = phm_init(n, input_dim, 4 * hidden_dim,
                              seed=int(rng.integers(2 ** 63)), bias=False)
        self.phm_h = phm_init(n, hidden_dim, 4 * hidden_dim,
                              seed=int(rng.integers(2 ** 63)), bias=False)
        self.b = Tensor(np.zeros(4 * hidden_dim), requires_grad=True)

    def parameters(self):
        return (self.phm_x.parameters() + self.phm_h.parameters() + [self.b])

    def named_parameters(self):
        out = {"phm_x.A": self.phm_x.A, "phm_x.S": self.phm_x.S,
               "phm_h.A": self.phm_h.A, "phm_h.S": self.phm_h.S,
               "b": self.b}
        return out

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
        """One update; returns (h_t, c_t)."""
        y = add_bias(add(phm_forward(self.phm_x, x_t),
                         phm_forward(self.phm_h, h_prev)), self.b)
        f, i, o, cand = split_lastdim(y, 4)
        c_t = add(mul(sigmoid(f), c_prev), mul(sigmoid(i), tanh(cand)))
        if self.literal_output_gate:
            h_t = mul(o, c_t)
        else:
            h_t = mul(sigmoid(o), tanh(c_t))
        return h_t, c_t

    def zero_state(self, batch_shape=()):
        shape = tuple(batch_shape) + (self.hidden_dim,)
        z = np.zeros(shape)
        return Tensor(z), Tensor(z.copy())


def lstm_forward(cell: PhmLstmCell, sequence):
    """Left-to-right recurrence from zero state; returns the list of h_t."""
    sequence = list(sequence)
    if not sequence:
        raise ShapeError("lstm_forward: empty sequence")
    lead = sequence[0].data.shape[:-1]
    h, c = cell.zero_state(lead)
    outputs = []
    for x_t in sequence:
        h, c = cell.step(x_t, h, c)
        outputs.append(h)
    return outputs


# ---------------------------------------------------------------------------
# attention stack
# ---------------------------------------------------------------------------

def _transpose_last2(t: Tensor) -> Tensor:
    axes = list(range(t.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(t, axes)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two dims."""
    dk = q.data.shape[-1]
    scores = scale(matmul(q, _transpose_last2(k)), 1.0 / math.sqrt(dk))
    if mask is not None:
        scores = add(scores, mask)
    return matmul(softmax_lastdim(scores), v)


def single_head_attention(qkv: PhmParams, x: Tensor) -> Tensor:
    """Self-attention with one head: one structured layer emits the
    stacked query/key/value, which a three-way split separates."""
    q, k, v = split_lastdim(phm_forward(qkv, x), 3)
    return scaled_dot_attention(q, k, v)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    b, length, d = t.data.shape
    return permute(reshape(t, (b, length, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    b, h, length, dk = t.data.shape
    return reshape(permute(t, (0, 2, 1, 3)), (b, length, h * dk))


def multi_head_attention(qkv: PhmParams, out: PhmParams, heads: int,
                         x: Tensor, mask=None) -> Tensor:
    """Self-attention: shared qkv layer, per-head attention, column-wise
    concatenation of the heads, then one structured mixing layer."""
    q, k, v = split_lastdim(phm_forward(qkv, x), 3)
    a = scaled_dot_attention(_split_heads(q, heads), _split_heads(k, heads),
                             _split_heads(v, heads), mask)
    return phm_forward(out, _merge_heads(a))


def cross_attention(q_proj: PhmParams, kv_proj: PhmParams, out: PhmParams,
                    heads: int, x: Tensor, memory: Tensor) -> Tensor:
    q = phm_forward(q_proj, x)
    k, v = split_lastdim(phm_forward(kv_proj, memory), 2)
    a = scaled_dot_attention(_split_heads(q, heads), _split_heads(k, heads),
                             _split_heads(v, heads))
    return phm_forward(out, _merge_heads(a))


def ffn_forward(ffn1: PhmParams, ffn2: PhmParams, x: Tensor) -> Tensor:
    """Position-wise feed-forward: two structured layers around a ReLU."""
    return phm_forward(ffn2, relu(phm_forward(ffn1, x)))


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table of shape (max_len, d)."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    dim = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angles[:, 0::2])
    pe[:, 1::2] = np.cos(angles[:, 1::2])
    return pe


@dataclass
class ModelConfig:
    """Shape of the attention stack; one shared n for all structured layers."""

    layers: int
    d: int
    d_ff: int
    heads: int
    n: int
    vocab: int
    max_len: int
    dropout: float = 0.0

    def validate(self):
        if self.d % self.heads != 0:
            raise ShapeError(f"heads={self.heads} must divide d={self.d}")
        for dim in (self.d, self.d_ff):
            if dim % self.n != 0:
                raise ShapeError(f"n={self.n} must divide every layer width, got {dim}")
        if self.vocab < 3:
            raise ShapeError("vocab must reserve pad/bos/eos")
        return self


class _LayerNormParams:
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def named(self):
        return {"gamma": self.gamma, "beta": self.beta}


class _EncoderLayer:
    def __init__(self, cfg: ModelConfig, rng):
        d, dff, n = cfg.d, cfg.d_ff, cfg.n

        def init(d_in, d_out):
            return phm_init(n, d_in, d_out, seed=int(rng.integers(2 ** 63)))

        self.qkv = init(d, 3 * d)
        self.out = init(d, d)
        self.ffn1 = init(d, dff)
        self.ffn2 = init(dff, d)
        self.ln1 = _LayerNormParams(d)
        self.ln2 = _LayerNormParams(d)

    def sublayers(self):
        return {"qkv": self.qkv, "out": self.out,
                "ffn1": self.ffn1, "ffn2": self.ffn2}

    def norms(self):
        return {"ln1": self.ln1, "ln2": self.ln2}

    def __call__(self, x: Tensor, heads: int) -> Tensor:
        x = add(x, multi_head_attention(self.qkv, self.out, heads, self.ln1(x)))
        return add(x, ffn_forward(self.ffn1, self.ffn2, self.ln2(x)))


class _DecoderLayer:
    def __init__(self, cfg: ModelConfig, rng):
        d, dff, n = cfg.d, cfg.d_ff, cfg.n

        def init(d_in, d_out):
            return phm_init(n, d_in, d_out, seed=int(rng.integers(2 ** 63)))

        self.qkv = init(d, 3 * d)
        self.out = init(d, d)
        self.cross_q = init(d, d)
        self.cross_kv = init(d, 2 * d)
        self.cross_out = init(d, d)
        self.ffn1 = init(d, dff)
        self.ffn2 = init(dff, d)
        self.ln1 = _LayerNormParams(d)
        self.ln2 = _LayerNormParams(d)
        self.ln3 = _LayerNormParams(d)

    def sublayers(self):
        return {"qkv": self.qkv, "out": self.out, "cross_q": self.cross_q,
                "cross_kv": self.cross_kv, "cross_out": self.cross_out,
                "ffn1": self.ffn1, "ffn2": self.ffn2}

    def norms(self):
        return {"ln1": self.ln1, "ln2": self.ln2, "ln3": self.ln3}

    def __call__(self, x, memory, heads, causal_mask):
        x = add(x, multi_head_attention(self.qkv, self.out, heads,
                                        self.ln1(x), causal_mask))
        x = add(x, cross_attention(self.cross_q, self.cross_kv, self.cross_out,
                                   heads, self.ln2(x), memory))
        return add(x, ffn_forward(self.ffn1, self.ffn2, self.ln3(x)))


class PhmTransformer:
    """Encoder-decoder stack with structured projections throughout.

    Token ids are plain integer arrays of shape (batch, length).  The
    decoder self-attention is causally masked; ``greedy_decode`` runs
    inference one argmax token at a time.
    """

    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        rng = make_rng(seed)
        d = cfg.d
        emb_scale = 1.0 / math.sqrt(d)
        self.src_embed = Tensor(rng.normal(0.0, emb_scale, size=(cfg.vocab, d)),
                                requires_grad=True)
        self.tgt_embed = Tensor(rng.normal(0.0, emb_scale, size=(cfg.vocab, d)),
                                requires_grad=True)
        self.positions = sinusoidal_positions(cfg.max_len, d)
        self.encoder = [_EncoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.decoder = [_DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.enc_norm = _LayerNormParams(d)
        self.dec_norm = _LayerNormParams(d)
        self.out_w = Tensor(rng.normal(0.0, emb_scale, size=(cfg.vocab, d)),
                            requires_grad=True)
        self.out_b = Tensor(np.zeros(cfg.vocab), requires_grad=True)
        self._drop_rng = make_rng(int(rng.integers(2 ** 63)))

    # -- parameter bookkeeping ------------------------------------------

    def named_parameters(self) -> dict:
        out = {"src_embed": self.src_embed, "tgt_embed": self.tgt_embed,
               "out_proj.w": self.out_w, "out_proj.b": self.out_b}
        stacks = [("enc", self.encoder), ("dec", self.decoder)]
        for stack_name, stack in stacks:
            for idx, lay in enumerate(stack):
                base = f"{stack_name}{idx}"
                for name, p in lay.sublayers().items():
                    out[f"{base}.{name}.A"] = p.A
                    out[f"{base}.{name}.S"] = p.S
                    out[f"{base}.{name}.b"] = p.b
                for name, ln in lay.norms().items():
                    for pname, p in ln.named().items():
                        out[f"{base}.{name}.{pname}"] = p
        for pname, p in self.enc_norm.named().items():
            out[f"enc_norm.{pname}"] = p
        for pname, p in self.dec_norm.named().items():
            out[f"dec_norm.{pname}"] = p
        return out

    def parameters(self):
        return [p for p in self.named_parameters().values() if p.requires_grad]

    def param_count(self, include_embeddings: bool = False) -> int:
        """Element enumeration; embeddings and the vocabulary projection
        are counted only when requested (they do not scale with n)."""
        skip = () if include_embeddings else ("src_embed", "tgt_embed", "out_proj")
        total = 0
        for name, p in self.named_parameters().items():
            if skip and name.startswith(skip):
                continue
            total += p.data.size
        return total

    # -- forward --------------------------------------------------------

    def _embed(self, table: Tensor, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ShapeError("token ids must be (batch, length)")
        if ids.shape[1] > self.cfg.max_len:
            raise ShapeError(f"length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        x = scale(embedding(table, ids), math.sqrt(self.cfg.d))
        pos = Tensor(np.broadcast_to(self.positions[: ids.shape[1]], x.data.shape).copy())
        x = add(x, pos)
        if self.cfg.dropout > 0.0:
            x = dropout(x, self.cfg.dropout, self._drop_rng)
        return x

    def encode(self, src_ids: np.ndarray) -> Tensor:
        x = self._embed(self.src_embed, src_ids)
        for lay in self.encoder:
            x = lay(x, self.cfg.heads)
        return self.enc_norm(x)

    def _causal_mask(self, batch: int, length: int) -> Tensor:
        m = np.triu(np.full((length, length), -1e9), k=1)
        full = np.broadcast_to(m, (batch, self.cfg.heads, length, length)).copy()
        return Tensor(full)

    def decode(self, memory: Tensor, tgt_ids: np.ndarray) -> Tensor:
        tgt_ids = np.asarray(tgt_ids)
        x = self._embed(self.tgt_embed, tgt_ids)
        mask = self._causal_mask(tgt_ids.shape[0], tgt_ids.shape[1])
        for lay in self.decoder:
            x = lay(x, memory, self.cfg.heads, mask)
        return linear(self.dec_norm(x), self.out_w, self.out_b)

    def forward(self, src_ids: np.ndarray, tgt_ids: np.ndarray) -> Tensor:
        """Teacher-forced logits of shape (batch, tgt_len, vocab)."""
        return self.decode(self.encode(src_ids), tgt_ids)

    def loss(self, src_ids, decoder_in, targets) -> Tensor:
        return cross_entropy(self.forward(src_ids, decoder_in), targets)

    def greedy_decode(self, src_ids: np.ndarray, max_steps: int) -> np.ndarray:
        """Argmax decoding from BOS; stops a row after it emits EOS."""
        src_ids = np.asarray(src_ids)
        memory = self.encode(src_ids)
        batch = src_ids.shape[0]
        out = np.full((batch, 1), BOS_ID, dtype=np.int64)
        finished = np.zeros(batch, dtype=bool)
        for _ in range(max_steps):
            logits = self.decode(memory, out)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1)
            nxt = np.where(finished, PAD_ID, nxt)
            out = np.concatenate([out, nxt[:, None]], axis=1)
            finished |= nxt == EOS_ID
            if finished.all():
                break
        return out[:, 1:]


def count_transformer_params(layers: int, d: int, d_ff: int, heads: int,
                             n: int, include_embeddings: bool = False,
                             vocab: int = 0) -> int:
    """Closed-form parameter count matching :meth:`PhmTransformer.param_count`.

    Used for audits at widths too large to instantiate; a test pins it to
    the element enumeration of a real toy model.
    """
    if d % heads != 0 or d % n != 0 or d_ff % n != 0:
        raise ShapeError("invalid config for the given heads/n")

    def phm(d_in, d_out):
        return phm_param_count(n, d_in, d_out, with_bias=True)

    ln = 2 * d
    enc = phm(d, 3 * d) + phm(d, d) + phm(d, d_ff) + phm(d_ff, d) + 2 * ln
    dec = (phm(d, 3 * d) + phm(d, d) + phm(d, d) + phm(d, 2 * d) + phm(d, d)
           + phm(d, d_ff) + phm(d_ff, d) + 3 * ln)
    total = layers * (enc + dec) + 2 * ln
    if include_embeddings:
        total += 2 * vocab * d + vocab * d + vocab
    return total
