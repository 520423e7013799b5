"""Post-layernorm transformer encoder blocks (BERT layout).

Used for the frozen language backbone and for the small visual/acoustic
encoders. Parameters live in a :class:`~amb.params.ParameterSet`; the
dataclasses below are named views onto it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class AttentionParams:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor
    heads: int

    @classmethod
    def bind(cls, ps, prefix, heads):
        g = lambda s: ps[f"{prefix}.{s}"]  # noqa: E731
        return cls(g("q.w"), g("q.b"), g("k.w"), g("k.b"), g("v.w"), g("v.b"),
                   g("o.w"), g("o.b"), heads)


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    attn_ln_gain: T.Tensor
    attn_ln_bias: T.Tensor
    ffn_w1: T.Tensor
    ffn_b1: T.Tensor
    ffn_w2: T.Tensor
    ffn_b2: T.Tensor
    ffn_ln_gain: T.Tensor
    ffn_ln_bias: T.Tensor

    @classmethod
    def bind(cls, ps, prefix, heads):
        g = lambda s: ps[f"{prefix}.{s}"]  # noqa: E731
        return cls(AttentionParams.bind(ps, f"{prefix}.attn", heads),
                   g("attn_ln.gain"), g("attn_ln.bias"),
                   g("ffn.in.w"), g("ffn.in.b"), g("ffn.out.w"), g("ffn.out.b"),
                   g("ffn_ln.gain"), g("ffn_ln.bias"))


@dataclass
class EmbeddingTables:
    token: T.Tensor
    position: T.Tensor
    segment: T.Tensor
    ln_gain: T.Tensor
    ln_bias: T.Tensor

    @classmethod
    def bind(cls, ps, prefix="embeddings"):
        g = lambda s: ps[f"{prefix}.{s}"]  # noqa: E731
        return cls(g("token"), g("position"), g("segment"), g("ln.gain"), g("ln.bias"))


def encoder_layer_shapes(prefix, d, d_ff):
    shapes = {}
    for proj in ("q", "k", "v", "o"):
        shapes[f"{prefix}.attn.{proj}.w"] = (d, d)
        shapes[f"{prefix}.attn.{proj}.b"] = (d,)
    shapes[f"{prefix}.attn_ln.gain"] = (d,)
    shapes[f"{prefix}.attn_ln.bias"] = (d,)
    shapes[f"{prefix}.ffn.in.w"] = (d, d_ff)
    shapes[f"{prefix}.ffn.in.b"] = (d_ff,)
    shapes[f"{prefix}.ffn.out.w"] = (d_ff, d)
    shapes[f"{prefix}.ffn.out.b"] = (d,)
    shapes[f"{prefix}.ffn_ln.gain"] = (d,)
    shapes[f"{prefix}.ffn_ln.bias"] = (d,)
    return shapes


def embedding_shapes(vocab, max_len, d, prefix="embeddings"):
    return {f"{prefix}.token": (vocab, d), f"{prefix}.position": (max_len, d),
            f"{prefix}.segment": (2, d), f"{prefix}.ln.gain": (d,), f"{prefix}.ln.bias": (d,)}


def multi_head_attention(params, x, mask=None, return_weights=False):
    """Scaled dot-product self-attention over ``x`` of shape [T, d].

    ``mask`` flags valid key positions; invalid keys get a -inf score and
    hence exactly zero weight.
    """
    seq, d = x.shape
    h = params.heads
    dh = d // h
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (seq,):
            raise T.DimensionError(f"mask shape {mask.shape} does not match sequence length {seq}")
        if not mask.any():
            raise ValueError("attention mask has no valid position")

    q = T.linear(x, params.wq, params.bq)
    k = T.linear(x, params.wk, params.bk)
    v = T.linear(x, params.wv, params.bv)
    ctx = T.attention_core(q, k, v, h, mask)
    out = T.linear(ctx, params.wo, params.bo)
    if not return_weights:
        return out
    split = lambda a: a.reshape(seq, h, dh).transpose(1, 0, 2)  # noqa: E731
    weights = T.attention_weights(split(q.data), split(k.data),
                                  np.asarray(1.0 / math.sqrt(dh), dtype=x.dtype), mask)
    return out, weights


_ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


def encoder_layer_forward(params, x, mask=None, dropout=0.0, training=False, rng=None,
                          activation="gelu", eps=1e-12):
    """x -> attn -> dropout -> +x -> LN -> FFN -> dropout -> + -> LN."""
    act = _ACTIVATIONS[activation]
    a = T.dropout(multi_head_attention(params.attn, x, mask), dropout, training, rng)
    h = T.layer_norm(T.add(x, a), params.attn_ln_gain, params.attn_ln_bias, eps)
    f = T.linear(act(T.linear(h, params.ffn_w1, params.ffn_b1)), params.ffn_w2, params.ffn_b2)
    f = T.dropout(f, dropout, training, rng)
    return T.layer_norm(T.add(h, f), params.ffn_ln_gain, params.ffn_ln_bias, eps)


def embed_sequence(tables, token_ids, positions=None, dropout=0.0, training=False, rng=None,
                   eps=1e-12):
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if positions is None:
        positions = np.arange(len(token_ids))
    positions = np.asarray(positions, dtype=np.int64)
    if len(positions) != len(token_ids):
        raise T.DimensionError(f"{len(token_ids)} tokens but {len(positions)} positions")
    tok = T.embedding(tables.token, token_ids)
    pos = T.embedding(tables.position, positions)
    seg = T.embedding(tables.segment, np.zeros(len(token_ids), dtype=np.int64))
    x = T.layer_norm(T.add(T.add(tok, pos), seg), tables.ln_gain, tables.ln_bias, eps)
    return T.dropout(x, dropout, training, rng)
