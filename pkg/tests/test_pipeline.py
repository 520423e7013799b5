import json
import logging

import numpy as np
import pytest

from amb.config import AMBConfig
from amb.pipeline import (DataError, MultimodalSample, SyntheticWeights, collate_batch, generate_synthetic,
                          iterate_batches, load_jsonl, prepare, resolve_vocab, save_jsonl, split_synthetic,
                          synthetic_vocab, text_score)


def line(**kw):
    obj = {"id": "s1", "text": "good movie", "visual": [[0.0] * 3] * 2, "acoustic": [[1.0] * 2] * 2,
           "label": 1.5}
    obj.update(kw)
    return json.dumps(obj)


def write(tmp_path, *lines):
    p = tmp_path / "d.jsonl"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def test_load_valid_file_skips_blank_lines(tmp_path):
    p = write(tmp_path, line(), "", line(id="s2", label=-3))
    samples = load_jsonl(p, d_visual=3, d_audio=2)
    assert [s.id for s in samples] == ["s1", "s2"]
    assert samples[0].visual.shape == (2, 3) and samples[1].label == -3.0


@pytest.mark.parametrize("bad, message", [
    (line(label=3.5), "outside"),
    (line(label="x"), "not a number"),
    ('{"id": "s1"', "malformed"),
    (json.dumps({"id": "s1", "text": "a"}), "missing keys"),
    (line(visual=[[0.0] * 4]), "dimension"),
    (line(visual=[[0.0, 1.0, 2.0], [1.0]]), "rectangular"),
    (line(acoustic=[[float("nan")] * 2]), "non-finite"),
    ("[1, 2]", "JSON object"),
])
def test_load_rejects_bad_lines_with_location(tmp_path, bad, message):
    p = write(tmp_path, line(), bad)
    with pytest.raises(DataError, match=message) as exc:
        load_jsonl(p, d_visual=3, d_audio=2)
    assert f"{p}:2" in str(exc.value)


def test_unaligned_frames_only_warn(tmp_path, caplog):
    p = write(tmp_path, line(visual=[[0.0] * 3] * 5))
    with caplog.at_level(logging.WARNING):
        assert len(load_jsonl(p, d_visual=3, d_audio=2)) == 1
    assert "not word aligned" in caplog.text


def test_jsonl_round_trip_is_exact(tmp_path):
    samples = generate_synthetic(5, 3, d_visual=4, d_audio=3)
    save_jsonl(samples, tmp_path / "s.jsonl")
    assert load_jsonl(tmp_path / "s.jsonl", d_visual=4, d_audio=3) == samples


def test_synthetic_is_deterministic_and_depends_on_all_modalities():
    a, b = generate_synthetic(50, 1), generate_synthetic(50, 1)
    assert a == b
    assert a != generate_synthetic(50, 2)
    s = generate_synthetic(3000, 0)
    y = np.array([x.label for x in s])
    assert y.min() >= -3 and y.max() <= 3
    w = SyntheticWeights()
    text = np.array([text_score(x.text) for x in s])
    vis = np.array([x.visual.mean(0).sum() / np.sqrt(x.visual.shape[1]) for x in s])
    aud = np.array([x.acoustic.mean(0).sum() / np.sqrt(x.acoustic.shape[1]) for x in s])
    for feature in (text, vis, aud):
        assert np.corrcoef(feature, y)[0, 1] > 0.15
    # text dominates but does not explain everything
    r_text = np.corrcoef(text, y)[0, 1]
    assert r_text > max(np.corrcoef(vis, y)[0, 1], np.corrcoef(aud, y)[0, 1])
    resid = y - w.text * text
    assert np.corrcoef(resid, vis)[0, 1] > 0.3


def test_text_score():
    assert text_score("good good bad movie") == pytest.approx(0.25)
    assert text_score("") == 0.0


def test_split_and_vocab():
    train, dev = split_synthetic(generate_synthetic(10, 0))
    assert len(train) == 8 and len(dev) == 2
    config, vocab = resolve_vocab(AMBConfig.toy())
    assert config.vocab_size == len(vocab) == len(synthetic_vocab())


def test_collate_pads_and_masks():
    config, vocab = resolve_vocab(AMBConfig.toy())
    samples = [MultimodalSample("a", "good", np.ones((1, 35)), np.ones((1, 74)), 1.0),
               MultimodalSample("b", "bad movie was sad", np.ones((4, 35)), np.ones((4, 74)), -1.0)]
    batch = collate_batch(prepare(samples, vocab, config.max_len))
    assert batch.token_ids.shape == (2, 6)
    assert batch.token_mask.sum(1).tolist() == [3, 6]
    assert batch.visual.shape == (2, 4, 35) and batch.visual_mask.sum(1).tolist() == [1, 4]
    assert not batch.visual[0, 1:].any()
    ids, v, a = batch.sample_inputs(0)
    assert len(ids) == 3 and v.shape == (1, 35) and a.shape == (1, 74)
    with pytest.raises(ValueError):
        collate_batch([])


def test_iterate_batches_is_seeded_and_covers_everything():
    config, vocab = resolve_vocab(AMBConfig.toy())
    ex = prepare(generate_synthetic(11, 0, config), vocab, config.max_len)
    order = lambda seed: [i for b in iterate_batches(ex, 4, np.random.default_rng(seed)) for i in b.ids]  # noqa: E731
    assert order(1) == order(1)
    assert sorted(order(1)) == sorted(e.id for e in ex)
    assert [len(b) for b in iterate_batches(ex, 4)] == [4, 4, 3]
