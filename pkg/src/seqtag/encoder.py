"""Multi-head self-attention encoder in two flavors.

The vanilla mode is the standard transformer encoder layer: per-head learned
query/key/value projections, scaled dot-product attention, concatenated
heads through a shared output projection, then a position-wise feed-forward
sublayer; absolute sinusoidal position embeddings are added to the input
once, before the first layer.

The adapted mode replaces the key projection with a direct slice of the
input (head h reads columns [h*d_k, (h+1)*d_k)), drops the output
projection, and scores each query-key pair with four terms: content-content,
content-position, a global key bias, and a global position bias, where the
position vector encodes the signed offset between query and key. Per-head
bias vectors u (key bias) and v (position bias) start at zero. The softmax
is applied to raw scores by default; the scaled flag restores division by
sqrt(d_k).

Both modes share post-norm residual wiring: x -> sublayer -> add -> layer
norm. Padding is excluded with an additive mask of NEG_INF on invalid key
columns, which underflows to exactly zero attention after softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .positional import RelativeTable, SinusoidalTable
from .tensor import (NEG_INF, Tensor, add, concat, dropout, gather, layer_norm,
                     matmul, mul, narrow, relu, reshape, scale, softmax_lastdim,
                     transpose)


@dataclass
class EncoderConfig:
    """Architectural description of the word-level encoder."""

    mode: str = "adapted"            # "vanilla" or "adapted"
    scaled: bool = False
    n_layers: int = 1
    n_heads: int = 4
    d_model: int = 32
    d_ff: int = 64
    attn_dropout: float = 0.15
    ffn_dropout: float = 0.15
    max_len: int = 512

    def __post_init__(self):
        self.validate()

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        if self.mode not in ("vanilla", "adapted"):
            raise ConfigError(f"unknown encoder mode {self.mode!r}")
        if self.n_layers < 0 or self.n_heads < 1 or self.d_model < 1 or self.d_ff < 1:
            raise ConfigError("layer/head/dimension counts must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.mode == "adapted" and (self.d_model // self.n_heads) % 2 != 0:
            raise ConfigError(
                f"adapted mode needs an even head dimension, got {self.d_k}")
        for name in ("attn_dropout", "ffn_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "scaled": self.scaled, "n_layers": self.n_layers,
                "n_heads": self.n_heads, "d_model": self.d_model, "d_ff": self.d_ff,
                "attn_dropout": self.attn_dropout, "ffn_dropout": self.ffn_dropout,
                "max_len": self.max_len}


class Linear:
    """Dense layer; weights uniform(-1/sqrt(fan_in), ..), bias zero."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True):
        bound = 1.0 / np.sqrt(d_in)
        self.w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        if self.b is not None:
            y = add(y, self.b)
        return y

    def parameters(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out


class LayerNorm:
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def parameters(self):
        return [("gain", self.gain), ("bias", self.bias)]


def _offset_indices(length: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat gather indices mapping (query t, key j) to the offset t - j.

    The per-sequence offset table has 2l-1 rows for offsets -(l-1)..(l-1);
    row index of offset r is r + l - 1.
    """
    t = np.arange(length)
    offs = t[:, None] - t[None, :] + (length - 1)   # (l, l) in [0, 2l-2]
    row_base = t[:, None] * (2 * length - 1)
    return (row_base + offs).ravel(), offs.ravel()


def attention_apply(scores: Tensor, values: Tensor, scaled: bool,
                    d_k: int | None = None, attn_dropout: float = 0.0,
                    rng: np.random.Generator | None = None,
                    training: bool = False) -> Tensor:
    """Softmax the scores (optionally divided by sqrt(d_k)) and mix the values."""
    if np.any(scores.data.max(axis=-1) <= NEG_INF / 2):
        raise ContractError("attention_apply: a query row has no valid key position")
    if d_k is None:
        d_k = values.shape[-1]
    if scaled:
        scores = scale(scores, 1.0 / np.sqrt(d_k))
    weights = softmax_lastdim(scores)
    weights = dropout(weights, attn_dropout, rng, training)
    return matmul(weights, values)


class MultiHeadAttention:
    """Per-head attention scores and value mixing for one layer."""

    def __init__(self, mode: str, n_heads: int, d_model: int,
                 rng: np.random.Generator, scaled: bool = False,
                 attn_dropout: float = 0.0, qkv_bias: bool = False):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.mode = mode
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_k = d_model // n_heads
        self.scaled = scaled
        self.attn_dropout = attn_dropout

        def head_linear() -> Linear:
            return Linear(d_model, self.d_k, rng, bias=qkv_bias)

        self.w_q = [head_linear() for _ in range(n_heads)]
        self.w_v = [head_linear() for _ in range(n_heads)]
        if mode == "vanilla":
            self.w_k = [head_linear() for _ in range(n_heads)]
            self.w_o = Linear(d_model, d_model, rng, bias=qkv_bias)
            self.u = self.v = None
        elif mode == "adapted":
            self.w_k = None
            self.w_o = None
            self.u = [Tensor(np.zeros(self.d_k), requires_grad=True)
                      for _ in range(n_heads)]
            self.v = [Tensor(np.zeros(self.d_k), requires_grad=True)
                      for _ in range(n_heads)]
        else:
            raise ConfigError(f"unknown attention mode {mode!r}")

    def head_scores(self, h: Tensor, mask_add: Tensor | None,
                    rel: RelativeTable | None) -> list[Tensor]:
        """Raw (un-scaled, mask-applied) score matrices, one per head."""
        length = h.shape[0]
        scores = []
        if self.mode == "vanilla":
            for i in range(self.n_heads):
                q = self.w_q[i](h)
                k = self.w_k[i](h)
                s = matmul(q, transpose(k))
                if mask_add is not None:
                    s = add(s, mask_add)
                scores.append(s)
            return scores

        if rel is None:
            raise ContractError("adapted attention needs a relative offset table")
        if rel.window < length - 1:
            raise ConfigError(
                f"relative window {rel.window} shorter than sequence needs {length - 1}")
        window_rows = narrow(rel.as_tensor(), 0, rel.window - (length - 1),
                             2 * length - 1)
        qr_idx, vr_idx = _offset_indices(length)
        for i in range(self.n_heads):
            q = self.w_q[i](h)
            k = narrow(h, 1, i * self.d_k, self.d_k)
            content = matmul(q, transpose(k))                       # Q_t . K_j
            pos_logits = matmul(q, transpose(window_rows))          # Q_t . R_r
            content_pos = gather(pos_logits, qr_idx, (length, length))
            key_bias = matmul(k, self.u[i])                         # u . K_j
            pos_bias = gather(matmul(window_rows, self.v[i]),       # v . R_r
                              vr_idx, (length, length))
            s = add(add(add(content, content_pos), key_bias), pos_bias)
            if mask_add is not None:
                s = add(s, mask_add)
            scores.append(s)
        return scores

    def __call__(self, h: Tensor, mask_add: Tensor | None,
                 rel: RelativeTable | None, training: bool = False,
                 rng: np.random.Generator | None = None,
                 score_sink: list | None = None) -> Tensor:
        scores = self.head_scores(h, mask_add, rel)
        if score_sink is not None:
            score_sink.append([s.data.copy() for s in scores])
        heads = []
        for i, s in enumerate(scores):
            values = self.w_v[i](h)
            heads.append(attention_apply(s, values, self.scaled, self.d_k,
                                         self.attn_dropout, rng, training))
        out = concat(heads, axis=1)
        if self.w_o is not None:
            out = self.w_o(out)
        return out

    def parameters(self):
        params = []
        for i in range(self.n_heads):
            params += [(f"h{i}.q.{n}", t) for n, t in self.w_q[i].parameters()]
            params += [(f"h{i}.v.{n}", t) for n, t in self.w_v[i].parameters()]
            if self.mode == "vanilla":
                params += [(f"h{i}.k.{n}", t) for n, t in self.w_k[i].parameters()]
            else:
                params += [(f"h{i}.u", self.u[i]), (f"h{i}.vbias", self.v[i])]
        if self.w_o is not None:
            params += [(f"o.{n}", t) for n, t in self.w_o.parameters()]
        return params


class TransformerLayer:
    """Attention sublayer and feed-forward sublayer with post-norm residuals."""

    def __init__(self, mode: str, n_heads: int, d_model: int, d_ff: int,
                 rng: np.random.Generator, scaled: bool = False,
                 attn_dropout: float = 0.0, ffn_dropout: float = 0.0,
                 qkv_bias: bool = False):
        self.attn = MultiHeadAttention(mode, n_heads, d_model, rng, scaled,
                                       attn_dropout, qkv_bias)
        self.ln_attn = LayerNorm(d_model)
        self.ffn_in = Linear(d_model, d_ff, rng, bias=True)
        self.ffn_out = Linear(d_ff, d_model, rng, bias=True)
        self.ln_ffn = LayerNorm(d_model)
        self.ffn_dropout = ffn_dropout

    def __call__(self, h: Tensor, mask_add: Tensor | None,
                 rel: RelativeTable | None, training: bool = False,
                 rng: np.random.Generator | None = None,
                 score_sink: list | None = None) -> Tensor:
        attn_out = self.attn(h, mask_add, rel, training, rng, score_sink)
        h1 = self.ln_attn(add(h, attn_out))
        ff = relu(self.ffn_in(h1))
        ff = dropout(ff, self.ffn_dropout, rng, training)
        ff = self.ffn_out(ff)
        return self.ln_ffn(add(h1, ff))

    def parameters(self):
        params = [(f"attn.{n}", t) for n, t in self.attn.parameters()]
        params += [(f"ln_attn.{n}", t) for n, t in self.ln_attn.parameters()]
        params += [(f"ffn_in.{n}", t) for n, t in self.ffn_in.parameters()]
        params += [(f"ffn_out.{n}", t) for n, t in self.ffn_out.parameters()]
        params += [(f"ln_ffn.{n}", t) for n, t in self.ln_ffn.parameters()]
        return params


def padding_mask_add(mask: np.ndarray) -> Tensor | None:
    """Additive (l, l) matrix: NEG_INF on key columns marked invalid."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        return None
    if not mask.any():
        raise ContractError("padding mask leaves no valid position")
    row = np.where(mask, 0.0, NEG_INF)
    return Tensor(np.tile(row, (mask.size, 1)))


class TransformerEncoder:
    """A stack of identical layers; owns the positional tables."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator,
                 qkv_bias: bool = False):
        config.validate()
        self.config = config
        self.layers = [
            TransformerLayer(config.mode, config.n_heads, config.d_model,
                             config.d_ff, rng, config.scaled,
                             config.attn_dropout, config.ffn_dropout, qkv_bias)
            for _ in range(config.n_layers)
        ]
        if config.mode == "vanilla":
            self.pe_table = SinusoidalTable(config.d_model, config.max_len)
            self.rel_table = None
        else:
            self.pe_table = None
            self.rel_table = RelativeTable(config.d_k, config.max_len)

    def __call__(self, embedded: Tensor, mask: np.ndarray | None = None,
                 training: bool = False, rng: np.random.Generator | None = None,
                 score_sink: list | None = None) -> Tensor:
        length = embedded.shape[0]
        if length > self.config.max_len:
            raise ConfigError(
                f"sequence length {length} exceeds configured max_len "
                f"{self.config.max_len}")
        h = embedded
        if self.pe_table is not None:
            h = add(h, self.pe_table.prefix(length))
        mask_add = padding_mask_add(mask) if mask is not None else None
        for layer in self.layers:
            h = layer(h, mask_add, self.rel_table, training, rng, score_sink)
        return h

    def parameters(self):
        params = []
        for i, layer in enumerate(self.layers):
            params += [(f"layer{i}.{n}", t) for n, t in layer.parameters()]
        return params


def attention_param_sizes(attn: MultiHeadAttention) -> int:
    """Total scalar count of the attention sublayer's parameters."""
    return sum(t.data.size for _, t in attn.parameters())
