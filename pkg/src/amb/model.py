"""AMB assembly: embeddings -> (backbone layer, adapter, fusion read-out) x L -> predictor.

Parameter naming scheme (also the tensor-archive key scheme)::

    embeddings.{token,position,segment,ln.gain,ln.bias}
    backbone.layer{i}.attn.{q,k,v,o}.{w,b}
    backbone.layer{i}.{attn_ln,ffn_ln}.{gain,bias}
    backbone.layer{i}.ffn.{in,out}.{w,b}
    adapter.layer{i}.{down,up}.{w,b}
    encoder.{visual,audio}.{in.w,in.b,cls,position,out.w,out.b}
    encoder.{visual,audio}.layer{j}.<same keys as a backbone layer>
    fusion.layer{i}.{proj,ffn.in,ffn.out}.{w,b}
    predictor.{w,b}
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import archive
from . import tensor as T
from .adaptation import (AdapterParams, EmptySequenceError, FusionLayerParams, ModalityEncoderParams,
                         adapter_shapes, ffn_fusion, fusion_shapes, insert_adapters, modality_encode,
                         modality_encoder_shapes, run_schedule)
from .config import MODES, AMBConfig, ConfigError
from .params import ParameterSet, truncated_normal
from .transformer import EmbeddingTables, EncoderLayerParams, embed_sequence, embedding_shapes, encoder_layer_shapes

FROZEN_PREFIXES = ("embeddings.", "backbone.")


def parameter_shapes(config):
    """Every parameter name and shape for ``config``, in registration order."""
    c = config
    shapes = OrderedDict(embedding_shapes(c.vocab_size, c.max_len, c.d_model))
    for i in range(c.layers):
        shapes.update(encoder_layer_shapes(f"backbone.layer{i}", c.d_model, c.d_ff))
    for i in range(c.layers):
        shapes.update(adapter_shapes(f"adapter.layer{i}", c.d_model, c.bottleneck))
    for name, d_mod in (("visual", c.d_visual), ("audio", c.d_audio)):
        shapes.update(modality_encoder_shapes(f"encoder.{name}", d_mod, c.d_enc, c.enc_d_ff, c.d_tok,
                                              c.enc_layers, c.max_frames))
    for i in range(c.layers):
        shapes.update(fusion_shapes(f"fusion.layer{i}", c.d_model, c.d_proj, c.d_tok, c.d_fuse, c.d_proj))
    shapes["predictor.w"] = (c.d_model + c.d_proj, 1)
    shapes["predictor.b"] = (1,)
    return shapes


def _initial_value(name, shape, rng, std, dtype):
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("b", "bias") or (name.startswith("adapter.") and ".up." in name):
        return np.zeros(shape, dtype=dtype)
    if leaf == "gain":
        return np.ones(shape, dtype=dtype)
    return truncated_normal(rng, shape, std, dtype)


def init_parameters(config, seed=None):
    """Truncated-normal weights, zero biases, unit gains, zero adapter up-projections."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    ps = ParameterSet(config.np_dtype)
    for name, shape in parameter_shapes(config).items():
        std = config.backbone_init_std if name.startswith(FROZEN_PREFIXES) else config.init_std
        ps.add(name, _initial_value(name, shape, rng, std, config.np_dtype))
    ps.apply_mask(build_freeze_mask(config, ps))
    return ps


def build_freeze_mask(config, params):
    """name -> trainable. Everything but the backbone and embeddings trains, except in finetune mode."""
    mode = config.mode if isinstance(config, AMBConfig) else config
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; valid modes: {', '.join(MODES)}")
    names = list(params)
    if mode == "finetune":
        return {n: True for n in names}
    return {n: not n.startswith(FROZEN_PREFIXES) for n in names}


def parameter_group(name):
    parts = name.split(".")
    return ".".join(parts[:2]) if parts[0] == "encoder" else parts[0]


def count_parameters(params, mask=None):
    """Exact counts from tensor shapes; ``params`` may be a ParameterSet or a name->shape map."""
    if isinstance(params, ParameterSet):
        shapes = params.shapes()
        mask = params.mask if mask is None else mask
    else:
        shapes = dict(params)
    if mask is None:
        raise ValueError("a freeze mask is required when counting from shapes")
    groups = OrderedDict()
    totals = {"trainable": 0, "frozen": 0, "total": 0}
    for name, shape in shapes.items():
        n = int(np.prod(shape, dtype=np.int64))
        kind = "trainable" if mask[name] else "frozen"
        g = groups.setdefault(parameter_group(name), {"trainable": 0, "frozen": 0, "total": 0})
        for bucket in (g, totals):
            bucket[kind] += n
            bucket["total"] += n
    return {**totals, "groups": groups}


# ------------------------------------------------------------------ forward

@dataclass
class ForwardTrace:
    """Intermediate values of one sample's forward pass."""
    hidden: list = field(default_factory=list)
    cls_states: list = field(default_factory=list)
    fused: list = field(default_factory=list)
    v_tok: T.Tensor | None = None
    a_tok: T.Tensor | None = None


class AMBModel:
    def __init__(self, config, params=None):
        self.config = config
        self.params = init_parameters(config) if params is None else params
        if params is not None:
            self.params.apply_mask(build_freeze_mask(config, self.params))
        self._bind()

    def _bind(self):
        c, ps = self.config, self.params
        self.embeddings = EmbeddingTables.bind(ps)
        layers = [EncoderLayerParams.bind(ps, f"backbone.layer{i}", c.heads) for i in range(c.layers)]
        adapters = [AdapterParams.bind(ps, f"adapter.layer{i}") for i in range(c.layers)]
        self.schedule = insert_adapters(layers, adapters)
        self.visual_encoder = ModalityEncoderParams.bind(ps, "encoder.visual", c.enc_layers, c.enc_heads)
        self.audio_encoder = ModalityEncoderParams.bind(ps, "encoder.audio", c.enc_layers, c.enc_heads)
        self.fusion = [FusionLayerParams.bind(ps, f"fusion.layer{i}") for i in range(c.layers)]
        self.predictor_w, self.predictor_b = ps["predictor.w"], ps["predictor.b"]

    # -- pieces -------------------------------------------------------------
    def backbone_states(self, token_ids, training=False, rng=None, use_adapters=True):
        c = self.config
        p = c.dropout if training else 0.0
        x = embed_sequence(self.embeddings, token_ids, None, p, training, rng, c.ln_eps)
        return run_schedule(self.schedule, x, p, training, rng, c.ln_eps, use_adapters)

    def modality_tokens(self, visual, acoustic, training=False, rng=None):
        c = self.config
        if c.mode == "text_only":
            zero = T.zeros((c.d_tok,), c.np_dtype)
            return zero, zero
        p = c.dropout if training else 0.0
        try:
            v = modality_encode(self.visual_encoder, visual, None, p, training, rng, c.ln_eps)
            a = modality_encode(self.audio_encoder, acoustic, None, p, training, rng, c.ln_eps)
        except EmptySequenceError as exc:
            raise EmptySequenceError(f"{exc} (mode {c.mode} needs visual and acoustic input)") from None
        return v, a

    def forward_sample(self, token_ids, visual, acoustic, training=False, rng=None, trace=None):
        """One sample, unpadded inputs -> prediction tensor of shape (1,)."""
        c = self.config
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if c.mode == "no_text":
            # keep only the [CLS] ... [SEP] skeleton
            token_ids = token_ids[[0, -1]] if len(token_ids) >= 2 else token_ids
        if training and rng is None:
            raise ValueError("training forward needs an rng for dropout")
        visual = np.asarray(visual, dtype=c.np_dtype).reshape(-1, c.d_visual)
        acoustic = np.asarray(acoustic, dtype=c.np_dtype).reshape(-1, c.d_audio)
        v_tok, a_tok = self.modality_tokens(visual, acoustic, training, rng)
        states = self.backbone_states(token_ids, training, rng)
        p = c.dropout if training else 0.0
        fused = None
        for i, h in enumerate(states):
            cls_state = T.reshape(T.take(h, slice(0, 1)), (c.d_model,))
            out = ffn_fusion(self.fusion[i], cls_state, v_tok, a_tok, p, training, rng)
            fused = T.add(fused, out) if (fused is not None and c.fusion_stream == "residual") else out
            if trace is not None:
                trace.cls_states.append(cls_state)
                trace.fused.append(fused)
        if trace is not None:
            trace.hidden, trace.v_tok, trace.a_tok = states, v_tok, a_tok
        cls_last = T.take(states[-1], slice(0, 1))
        feats = T.concat([cls_last, T.reshape(fused, (1, c.d_proj))], axis=-1)
        return T.reshape(T.linear(feats, self.predictor_w, self.predictor_b), (1,))

    def forward_batch(self, batch, training=False, rng=None):
        """Per-sample forwards over a collated batch; returns a [B] tensor.

        Each sample is cut back to its own valid length first, so its result does
        not depend on what else is in the batch.
        """
        preds = [self.forward_sample(*batch.sample_inputs(b), training=training, rng=rng)
                 for b in range(len(batch))]
        return T.concat(preds, axis=0)

    def predict(self, batch):
        return self.forward_batch(batch, training=False).data.copy()


def amb_forward(config, params, sample, training=False, rng=None):
    """Functional entry point: ``sample`` is (token_ids, visual, acoustic)."""
    return AMBModel(config, params).forward_sample(*sample, training=training, rng=rng)


# ------------------------------------------------------------- persistence

def save_weights(params, path, config=None):
    meta = {"config": json.dumps(config.to_dict(), sort_keys=True)} if config is not None else None
    archive.save_archive(path, params.arrays(), meta)


def load_weights(path, config=None):
    """Load and validate an archive. Without ``config`` the embedded one is used."""
    tensors, meta = archive.load_archive(path)
    if config is None:
        if "config" not in meta:
            raise archive.ArchiveError(f"{path}: no embedded config and none supplied")
        config = AMBConfig.from_mapping(json.loads(meta["config"]))
    expected = parameter_shapes(config)
    archive.validate(tensors, expected)
    ps = ParameterSet(config.np_dtype)
    for name in expected:
        ps.add(name, tensors[name])
    ps.apply_mask(build_freeze_mask(config, ps))
    return ps, config
