import numpy as np
import pytest

from amb import tensor as T
from amb.config import AMBConfig, ConfigError
from amb.model import (AMBModel, ForwardTrace, build_freeze_mask, count_parameters, init_parameters,
                       parameter_group, parameter_shapes)
from amb.pipeline import collate_batch, generate_synthetic, prepare, resolve_vocab
from amb.trainer import AdamState, adam_step, mae_loss

PAPER_ADAPTER_COUNT = 12 * (2 * 768 * 384 + 384 + 768)


def paper_counts(mode):
    config = AMBConfig.paper(mode=mode)
    shapes = parameter_shapes(config)
    return count_parameters(shapes, build_freeze_mask(config, shapes))


def test_paper_adapter_group_exact():
    counts = paper_counts("adapters")
    assert PAPER_ADAPTER_COUNT == 7_091_712
    assert counts["groups"]["adapter"]["trainable"] == PAPER_ADAPTER_COUNT
    assert counts["groups"]["adapter"]["frozen"] == 0


def test_paper_trainable_total_in_published_range():
    counts = paper_counts("adapters")
    assert 7.6e6 <= counts["trainable"] <= 9.6e6


def test_paper_backbone_is_bert_base_sized():
    counts = paper_counts("adapters")
    d, ff = 768, 3072
    per_layer = 4 * (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d) + 2 * d
    embeddings = 30522 * d + 128 * d + 2 * d + 2 * d  # token, position (max_len 128), segment, LN
    assert per_layer == 7_087_872
    assert counts["frozen"] == 12 * per_layer + embeddings == 108_596_736


def test_finetune_trainable_equals_adapters_trainable_plus_frozen():
    a, f = paper_counts("adapters"), paper_counts("finetune")
    assert f["trainable"] == a["trainable"] + a["frozen"]
    assert f["frozen"] == 0
    assert f["total"] == a["total"]


def test_groups_partition_every_parameter():
    config = AMBConfig.paper()
    shapes = parameter_shapes(config)
    counts = count_parameters(shapes, build_freeze_mask(config, shapes))
    assert sum(g["total"] for g in counts["groups"].values()) == counts["total"]
    assert counts["total"] == sum(int(np.prod(s)) for s in shapes.values())
    assert set(counts["groups"]) == {"embeddings", "backbone", "adapter", "encoder.visual", "encoder.audio",
                                     "fusion", "predictor"}
    assert parameter_group("encoder.audio.layer0.attn.q.w") == "encoder.audio"


def test_freeze_mask_by_mode():
    config, _ = resolve_vocab(AMBConfig.toy())
    ps = init_parameters(config)
    frozen = [n for n in ps if not ps.mask[n]]
    assert frozen and all(n.startswith(("embeddings.", "backbone.")) for n in frozen)
    assert all(ps.mask[n] for n in ps if n.startswith(("adapter.", "fusion.", "encoder.", "predictor.")))
    assert all(build_freeze_mask("finetune", ps).values())
    with pytest.raises(ConfigError):
        build_freeze_mask("bogus", ps)


def test_adapter_up_projections_start_at_zero_and_init_is_seeded():
    config, _ = resolve_vocab(AMBConfig.toy())
    a, b = init_parameters(config, seed=3), init_parameters(config, seed=3)
    assert all(np.array_equal(a[n].data, b[n].data) for n in a)
    assert not np.array_equal(a["backbone.layer0.attn.q.w"].data,
                              init_parameters(config, seed=4)["backbone.layer0.attn.q.w"].data)
    for name in a.names("adapter."):
        if ".up." in name:
            assert not a[name].data.any()


@pytest.fixture
def toy_model_and_data():
    config, vocab = resolve_vocab(AMBConfig.toy())
    examples = prepare(generate_synthetic(6, 0, config), vocab, config.max_len)
    return config, vocab, examples


def test_step0_cls_equivalence(toy_model_and_data):
    config, _, examples = toy_model_and_data
    model = AMBModel(config)
    ids = np.asarray(examples[0].encoded.token_ids)[np.asarray(examples[0].encoded.attention_mask)]
    adapted = model.backbone_states(ids, use_adapters=True)
    plain = model.backbone_states(ids, use_adapters=False)
    for h_a, h_p in zip(adapted, plain):
        assert np.array_equal(h_a.data[0], h_p.data[0])


def test_forward_shapes_and_trace(toy_model_and_data):
    config, _, examples = toy_model_and_data
    model = AMBModel(config)
    batch = collate_batch(examples)
    trace = ForwardTrace()
    out = model.forward_sample(*batch.sample_inputs(0), trace=trace)
    assert out.shape == (1,)
    assert len(trace.cls_states) == len(trace.fused) == config.layers
    assert trace.v_tok.shape == (config.d_tok,)
    assert model.forward_batch(batch).shape == (len(examples),)


def test_padding_invariance_is_bitwise(toy_model_and_data):
    config, _, examples = toy_model_and_data
    model = AMBModel(config)
    alone = model.predict(collate_batch(examples[:1]))
    longest = max(examples, key=lambda e: (e.encoded.length, len(e.visual)))
    mixed = model.predict(collate_batch([examples[0], longest]))
    assert alone[0] == mixed[0]


def _perturbed(model, sample, visual=False, text=False):
    ids, v, a = sample
    if visual:
        v, a = v + 3.0, a - 2.0
    if text:
        ids = ids.copy()
        ids[1:-1] = 5
    return model.forward_sample(ids, v, a).data[0]


def test_text_only_ignores_modalities(toy_model_and_data):
    config, _, examples = toy_model_and_data
    batch = collate_batch(examples)
    model = AMBModel(config.replace(mode="text_only"))
    s = batch.sample_inputs(1)
    assert _perturbed(model, s) == _perturbed(model, s, visual=True)


def test_no_text_ignores_words(toy_model_and_data):
    config, _, examples = toy_model_and_data
    batch = collate_batch(examples)
    model = AMBModel(config.replace(mode="no_text"))
    s = batch.sample_inputs(1)
    assert _perturbed(model, s) == _perturbed(model, s, text=True)
    assert _perturbed(model, s) != _perturbed(model, s, visual=True)


def test_adam_steps_leave_frozen_tensors_untouched(toy_model_and_data):
    config, _, examples = toy_model_and_data
    model = AMBModel(config)
    before = model.params.snapshot()
    state = AdamState(lr=1e-2)
    batch = collate_batch(examples)
    for _ in range(3):
        model.params.zero_grad()
        T.backward(mae_loss(model.forward_batch(batch), batch.labels))
        adam_step(state, model.params)
    for name, t in model.params.items():
        changed = not np.array_equal(before[name], t.data)
        if name.startswith(("embeddings.", "backbone.")):
            assert not changed and t.grad is None, name
    assert not np.array_equal(before["predictor.w"], model.params["predictor.w"].data)
