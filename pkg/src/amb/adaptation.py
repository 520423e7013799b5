"""Trainable pieces wrapped around the frozen backbone.

* bottleneck adapters, one after each backbone layer (after its feedforward
  layernorm), ``x + up(relu(down(x)))``;
* visual and acoustic encoders that compress a frame sequence into one token
  read off a learnable [CLS] slot;
* per-layer FFN-Fusion of the backbone's projected [CLS] state with both
  modality tokens. Backbone hidden states are never modified by fusion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .transformer import EncoderLayerParams, encoder_layer_forward, encoder_layer_shapes


class EmptySequenceError(ValueError):
    pass


# ------------------------------------------------------------------ adapters

@dataclass
class AdapterParams:
    w_down: T.Tensor
    b_down: T.Tensor
    w_up: T.Tensor
    b_up: T.Tensor

    @classmethod
    def bind(cls, ps, prefix):
        return cls(ps[f"{prefix}.down.w"], ps[f"{prefix}.down.b"], ps[f"{prefix}.up.w"], ps[f"{prefix}.up.b"])


def adapter_shapes(prefix, d, b):
    return {f"{prefix}.down.w": (d, b), f"{prefix}.down.b": (b,),
            f"{prefix}.up.w": (b, d), f"{prefix}.up.b": (d,)}


def adapter_param_count(d, b):
    return 2 * d * b + b + d


def adapter_forward(params, x):
    d = params.w_down.shape[0]
    if x.shape[-1] != d:
        raise T.DimensionError(f"adapter expects last dim {d}, got input {x.shape}")
    hidden = T.relu(T.linear(x, params.w_down, params.b_down))
    return T.add(x, T.linear(hidden, params.w_up, params.b_up))


@dataclass
class AdaptedLayer:
    layer: EncoderLayerParams
    adapter: AdapterParams | None


def insert_adapters(backbone_layers, adapters):
    """Pair every backbone layer with the adapter that follows it (Pfeiffer placement)."""
    backbone_layers, adapters = list(backbone_layers), list(adapters)
    if len(backbone_layers) != len(adapters):
        raise ValueError(f"{len(backbone_layers)} backbone layers but {len(adapters)} adapters")
    return [AdaptedLayer(layer, adapter) for layer, adapter in zip(backbone_layers, adapters)]


def run_schedule(schedule, x, dropout=0.0, training=False, rng=None, eps=1e-12, use_adapters=True):
    """Run the (adapted) backbone; returns the hidden state after every layer."""
    states = []
    for step in schedule:
        x = encoder_layer_forward(step.layer, x, None, dropout, training, rng, "gelu", eps)
        if use_adapters and step.adapter is not None:
            x = adapter_forward(step.adapter, x)
        states.append(x)
    return states


# --------------------------------------------------------- modality encoders

@dataclass
class ModalityEncoderParams:
    w_in: T.Tensor
    b_in: T.Tensor
    cls: T.Tensor
    position: T.Tensor
    layers: list
    w_out: T.Tensor
    b_out: T.Tensor

    @classmethod
    def bind(cls, ps, prefix, n_layers, heads):
        layers = [EncoderLayerParams.bind(ps, f"{prefix}.layer{j}", heads) for j in range(n_layers)]
        return cls(ps[f"{prefix}.in.w"], ps[f"{prefix}.in.b"], ps[f"{prefix}.cls"],
                   ps[f"{prefix}.position"], layers, ps[f"{prefix}.out.w"], ps[f"{prefix}.out.b"])


def modality_encoder_shapes(prefix, d_mod, d_enc, d_ff, d_tok, n_layers, max_frames):
    shapes = {f"{prefix}.in.w": (d_mod, d_enc), f"{prefix}.in.b": (d_enc,),
              f"{prefix}.cls": (d_enc,), f"{prefix}.position": (max_frames + 1, d_enc)}
    for j in range(n_layers):
        shapes.update(encoder_layer_shapes(f"{prefix}.layer{j}", d_enc, d_ff))
    shapes[f"{prefix}.out.w"] = (d_enc, d_tok)
    shapes[f"{prefix}.out.b"] = (d_tok,)
    return shapes


def modality_encode(params, seq, mask=None, dropout=0.0, training=False, rng=None, eps=1e-12):
    """Frames [T, d_mod] -> one token [d_tok] taken from the prepended [CLS] slot.

    Masked-out frames are dropped before encoding, so padding cannot change the
    result. Sequences longer than the position table are truncated at the end.
    """
    frames = seq.data if isinstance(seq, T.Tensor) else np.asarray(seq)
    if frames.ndim != 2 or frames.shape[1] != params.w_in.shape[0]:
        raise T.DimensionError(f"expected frames [T, {params.w_in.shape[0]}], got {frames.shape}")
    if mask is not None:
        frames = frames[np.asarray(mask, dtype=bool)]
    if len(frames) == 0:
        raise EmptySequenceError("modality sequence has no valid frames")
    frames = frames[: params.position.shape[0] - 1]
    n, d_enc = len(frames), params.cls.shape[0]
    x = T.linear(T.Tensor(frames.astype(params.w_in.dtype, copy=False)), params.w_in, params.b_in)
    x = T.concat([T.reshape(params.cls, (1, d_enc)), x], axis=0)
    x = T.add(x, T.embedding(params.position, np.arange(n + 1)))
    x = T.dropout(x, dropout, training, rng)
    for layer in params.layers:
        x = encoder_layer_forward(layer, x, None, dropout, training, rng, "gelu", eps)
    out = T.linear(T.take(x, slice(0, 1)), params.w_out, params.b_out)
    return T.reshape(out, (params.w_out.shape[1],))


# -------------------------------------------------------------------- fusion

@dataclass
class FusionLayerParams:
    w_proj: T.Tensor
    b_proj: T.Tensor
    w_in: T.Tensor
    b_in: T.Tensor
    w_out: T.Tensor
    b_out: T.Tensor

    @classmethod
    def bind(cls, ps, prefix):
        g = lambda s: ps[f"{prefix}.{s}"]  # noqa: E731
        return cls(g("proj.w"), g("proj.b"), g("ffn.in.w"), g("ffn.in.b"), g("ffn.out.w"), g("ffn.out.b"))


def fusion_shapes(prefix, d_model, d_proj, d_tok, d_fuse, d_out):
    return {f"{prefix}.proj.w": (d_model, d_proj), f"{prefix}.proj.b": (d_proj,),
            f"{prefix}.ffn.in.w": (d_proj + 2 * d_tok, d_fuse), f"{prefix}.ffn.in.b": (d_fuse,),
            f"{prefix}.ffn.out.w": (d_fuse, d_out), f"{prefix}.ffn.out.b": (d_out,)}


def ffn_fusion(params, cls_hidden, v_tok, a_tok, dropout=0.0, training=False, rng=None):
    """FFN(concat(proj(cls_hidden), v_tok, a_tok)) with a ReLU hidden layer."""
    d_proj = params.w_proj.shape[1]
    d_tok = (params.w_in.shape[0] - d_proj) // 2
    if cls_hidden.shape != (params.w_proj.shape[0],) or v_tok.shape != (d_tok,) or a_tok.shape != (d_tok,):
        raise T.DimensionError(
            f"fusion expects cls [{params.w_proj.shape[0]}] and tokens [{d_tok}], got "
            f"{cls_hidden.shape}, {v_tok.shape}, {a_tok.shape}")
    row = lambda t: T.reshape(t, (1, t.shape[0]))  # noqa: E731
    projected = T.linear(row(cls_hidden), params.w_proj, params.b_proj)
    z = T.concat([projected, row(v_tok), row(a_tok)], axis=-1)
    hidden = T.dropout(T.relu(T.linear(z, params.w_in, params.b_in)), dropout, training, rng)
    out = T.linear(hidden, params.w_out, params.b_out)
    return T.reshape(out, (params.w_out.shape[1],))
