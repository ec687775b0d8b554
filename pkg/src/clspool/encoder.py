"""Attention pooling block: per-frame frontend, then L blocks of
residual multi-head self-attention followed by a residual key-value
memory layer.

Layout conventions: sequences are (rows, d_model) with time down the
rows; appended tokens, when present, sit in the last rows. Attention
normalizes each row of QK^T over the key axis, memory layers normalize
input-vs-key scores over the memory index axis. No biases and no layer
norm anywhere: blocks are plain residuals.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderConfig:
    """Shape knobs for the pooling block.

    memory_topk defaults to memory_size // 4; set it to memory_size to
    disable truncation. frontend_layers == 0 means an identity frontend
    (input width must then equal d_model).
    """

    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 16
    d_k: int = 4
    memory_size: int = 64
    memory_topk: int | None = None
    frontend_layers: int = 1

    def __post_init__(self):
        if self.memory_topk is None:
            self.memory_topk = max(1, self.memory_size // 4)
        if min(self.d_model, self.n_blocks + 1, self.n_heads, self.d_k,
               self.memory_size, self.memory_topk, self.frontend_layers + 1) < 1:
            raise ValueError("all extents must be >= 1 (n_blocks, frontend_layers >= 0)")
        if self.n_heads * self.d_k != self.d_model:
            raise ValueError(
                f"n_heads * d_k must equal d_model "
                f"({self.n_heads} * {self.d_k} != {self.d_model})"
            )
        if self.memory_topk > self.memory_size:
            raise ValueError(f"memory_topk {self.memory_topk} > memory_size {self.memory_size}")


def init_param(rng, fan_in, shape):
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) trainable matrix."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), trainable=True)


class MsaLayer:
    """Per-head Q/K/V projections plus the shared output projection."""

    def __init__(self, w_q, w_k, w_v, w_head):
        self.w_q = w_q
        self.w_k = w_k
        self.w_v = w_v
        self.w_head = w_head

    @classmethod
    def init(cls, config, rng):
        d, dk = config.d_model, config.d_k
        w_q = [init_param(rng, d, (d, dk)) for _ in range(config.n_heads)]
        w_k = [init_param(rng, d, (d, dk)) for _ in range(config.n_heads)]
        w_v = [init_param(rng, d, (d, dk)) for _ in range(config.n_heads)]
        return cls(w_q, w_k, w_v, init_param(rng, d, (d, d)))

    @property
    def n_heads(self):
        return len(self.w_q)

    def parameters(self):
        for h in range(self.n_heads):
            yield f"head{h}.w_q", self.w_q[h]
            yield f"head{h}.w_k", self.w_k[h]
            yield f"head{h}.w_v", self.w_v[h]
        yield "w_head", self.w_head


class MemoryLayer:
    """Keys matrix scored against the input, values read out residually."""

    def __init__(self, u_k, u_v):
        self.u_k = u_k
        self.u_v = u_v

    @classmethod
    def init(cls, config, rng):
        d, m = config.d_model, config.memory_size
        return cls(init_param(rng, d, (d, m)), init_param(rng, m, (m, d)))

    def parameters(self):
        yield "u_k", self.u_k
        yield "u_v", self.u_v


@dataclass
class LayerAttention:
    """What one MSA layer did: per-head attention matrices and values,
    plus the concatenated head outputs before the output projection."""

    attention: list = field(default_factory=list)   # per head, (T', T')
    values: list = field(default_factory=list)      # per head, (T', d_k)
    head_concat: np.ndarray | None = None           # (T', d_model)


class AttentionRecord:
    """Per-MSA-layer attention traces collected during a forward pass."""

    def __init__(self):
        self.layers = []

    def last(self):
        if not self.layers:
            raise ValueError("attention record is empty")
        return self.layers[-1]


class EncoderParams:
    """Frontend affine stack plus the (MSA, memory) block pairs."""

    def __init__(self, frontend, blocks):
        self.frontend = frontend
        self.blocks = blocks

    @classmethod
    def init(cls, config, rng, input_dim=None):
        input_dim = config.d_model if input_dim is None else input_dim
        if config.frontend_layers == 0 and input_dim != config.d_model:
            raise ValueError(
                f"identity frontend needs input width {config.d_model}, got {input_dim}"
            )
        frontend = []
        width = input_dim
        for _ in range(config.frontend_layers):
            frontend.append(init_param(rng, width, (width, config.d_model)))
            width = config.d_model
        blocks = [
            (MsaLayer.init(config, rng), MemoryLayer.init(config, rng))
            for _ in range(config.n_blocks)
        ]
        return cls(frontend, blocks)

    def parameters(self):
        for i, w in enumerate(self.frontend):
            yield f"frontend{i}", w
        for i, (msa, mem) in enumerate(self.blocks):
            for name, p in msa.parameters():
                yield f"block{i}.msa.{name}", p
            for name, p in mem.parameters():
                yield f"block{i}.memory.{name}", p


def project_qkv(x, layer, head):
    """Linear Q/K/V projections of one head."""
    q = ad.matmul(x, layer.w_q[head])
    k = ad.matmul(x, layer.w_k[head])
    v = ad.matmul(x, layer.w_v[head])
    return q, k, v


def attention_weights(q, k):
    """Row-stochastic attention from scaled query-key scores."""
    d_k = q.values.shape[1]
    if k.values.shape[1] != d_k:
        raise ad.ShapeError(f"attention_weights: d_k mismatch {q.shape} vs {k.shape}")
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d_k))
    return ad.softmax(scores, axis=1)


def head_output(a, v):
    """Aggregate values by attention weights; rows are convex mixes of v."""
    return ad.matmul(a, v)


def _force_uniform_rows(a, n_rows):
    """Replace the last n_rows attention rows with exact averaging."""
    total = a.values.shape[0]
    uniform = Tensor(np.full((n_rows, total), 1.0 / total))
    return ad.concat_rows([ad.slice_rows(a, 0, total - n_rows), uniform])


def msa_forward(x, layer, record=None, uniform_token_rows=0):
    """One multi-head self-attention layer (no residual here).

    When `record` is given, appends this layer's attention matrices,
    per-head values, and pre-projection concatenation to it.
    `uniform_token_rows` > 0 pins the attention rows of that many
    trailing rows to exact averaging (diagnostic mode).
    """
    heads = []
    trace = LayerAttention() if record is not None else None
    for h in range(layer.n_heads):
        q, k, v = project_qkv(x, layer, h)
        a = attention_weights(q, k)
        if uniform_token_rows:
            a = _force_uniform_rows(a, uniform_token_rows)
        heads.append(head_output(a, v))
        if trace is not None:
            trace.attention.append(a.values)
            trace.values.append(v.values)
    concat = ad.concat_cols(heads)
    if trace is not None:
        trace.head_concat = concat.values
        record.layers.append(trace)
    return ad.matmul(concat, layer.w_head)


def memory_forward(x, layer, topk):
    """Residual key-value memory readout.

    Scores every row against the keys, keeps the topk highest per row,
    softmaxes over the kept scores, and adds the weighted values back
    onto the input.
    """
    memory_size = layer.u_k.values.shape[1]
    if topk > memory_size:
        raise ValueError(f"topk {topk} > memory size {memory_size}")
    scores = ad.matmul(x, layer.u_k)
    w = ad.topk_softmax(scores, topk, axis=1)
    return ad.add(x, ad.matmul(w, layer.u_v))


def frontend_forward(x, params):
    """Per-frame affine + tanh stack; identity when no frontend layers."""
    for w in params.frontend:
        x = ad.tanh(ad.matmul(x, w))
    return x


def blocks_forward(x, config, params, record=None, uniform_token_rows=0):
    """The n_blocks of (residual MSA, residual memory) after the
    frontend; this is where appended tokens enter."""
    if record is None:
        record = AttentionRecord()
    for msa, mem in params.blocks:
        x = ad.add(x, msa_forward(x, msa, record, uniform_token_rows))
        x = memory_forward(x, mem, config.memory_topk)
    return x, record


def encoder_forward(seq, config, params, record=None, uniform_token_rows=0):
    """Frontend, then n_blocks of (residual MSA, residual memory).

    Returns the final sequence and the attention record (a fresh one
    when `record` is None).
    """
    return blocks_forward(frontend_forward(seq, params), config, params,
                          record, uniform_token_rows)
