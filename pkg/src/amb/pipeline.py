"""Samples, JSONL ingestion, the synthetic corpus, and batching.

JSONL schema (UTF-8, one object per line, blank lines ignored)::

    {"id": str, "text": str,
     "visual":   [[float * d_visual] * T_v],
     "acoustic": [[float * d_audio] * T_a],
     "label": float in [-3, 3]}
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import EncodedText, Vocabulary, basic_tokenize, encode

log = logging.getLogger(__name__)

LABEL_MIN, LABEL_MAX = -3.0, 3.0


class DataError(ValueError):
    pass


@dataclass
class MultimodalSample:
    id: str
    text: str
    visual: np.ndarray
    acoustic: np.ndarray
    label: float

    def __eq__(self, other):
        if not isinstance(other, MultimodalSample):
            return NotImplemented
        return (self.id == other.id and self.text == other.text and self.label == other.label
                and self.visual.shape == other.visual.shape and self.acoustic.shape == other.acoustic.shape
                and np.array_equal(self.visual, other.visual) and np.array_equal(self.acoustic, other.acoustic))

    def to_json(self):
        return {"id": self.id, "text": self.text, "visual": self.visual.tolist(),
                "acoustic": self.acoustic.tolist(), "label": float(self.label)}


def _frames(value, dim, what, where):
    if not isinstance(value, list):
        raise DataError(f"{where}: {what} must be a list of frames")
    try:
        arr = np.array(value, dtype=np.float64).reshape(len(value), -1) if value else np.zeros((0, dim))
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: {what} frames are not numeric/rectangular") from exc
    if arr.shape[1] != dim:
        raise DataError(f"{where}: {what} frame dimension {arr.shape[1]} != expected {dim}")
    if not np.isfinite(arr).all():
        raise DataError(f"{where}: {what} contains non-finite values")
    return arr


def sample_from_json(obj, d_visual, d_audio, where="sample"):
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected a JSON object")
    missing = [k for k in ("id", "text", "visual", "acoustic", "label") if k not in obj]
    if missing:
        raise DataError(f"{where}: missing keys {missing}")
    try:
        label = float(obj["label"])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: label is not a number") from exc
    if not (math.isfinite(label) and LABEL_MIN <= label <= LABEL_MAX):
        raise DataError(f"{where}: label {label} outside [{LABEL_MIN:g}, {LABEL_MAX:g}]")
    sample = MultimodalSample(str(obj["id"]), str(obj["text"]),
                              _frames(obj["visual"], d_visual, "visual", where),
                              _frames(obj["acoustic"], d_audio, "acoustic", where), label)
    n_words = len(sample.text.split())
    if len(sample.visual) not in (0, n_words) or len(sample.acoustic) not in (0, n_words):
        log.warning("%s: %d words but %d visual / %d acoustic frames (not word aligned)",
                    where, n_words, len(sample.visual), len(sample.acoustic))
    return sample


def load_jsonl(path, config=None, d_visual=35, d_audio=74):
    if config is not None:
        d_visual, d_audio = config.d_visual, config.d_audio
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: malformed JSON ({exc.msg})") from exc
            samples.append(sample_from_json(obj, d_visual, d_audio, where))
    return samples


def save_jsonl(samples, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False) + "\n")


# ------------------------------------------------------------ synthetic data

POSITIVE_WORDS = ("good", "great", "love", "excellent", "happy", "wonderful")
NEGATIVE_WORDS = ("bad", "terrible", "hate", "awful", "sad", "boring")
NEUTRAL_WORDS = ("the", "movie", "film", "was", "i", "it", "this", "plot", "acting", "really",
                 "story", "and", "a", "of")


@dataclass(frozen=True)
class SyntheticWeights:
    """Label = clip(text * s_text + visual * <mean frame, u_v> + audio * <mean frame, u_a>, -3, 3).

    ``s_text`` is (#positive - #negative) / #words, the mean word polarity;
    ``u_v``/``u_a`` are the normalised all-ones directions of the
    visual/acoustic feature spaces. Text carries most of the label variance.
    """
    text: float = 4.0
    visual: float = 0.4
    audio: float = 0.3
    keyword_rate: float = 0.3
    min_words: int = 4
    max_words: int = 10


def synthetic_vocab():
    return Vocabulary.from_words([*POSITIVE_WORDS, *NEGATIVE_WORDS, *NEUTRAL_WORDS])


def text_score(text):
    """Mean polarity over words: +1 positive keyword, -1 negative, 0 otherwise."""
    words = basic_tokenize(text)
    if not words:
        return 0.0
    return (sum(w in POSITIVE_WORDS for w in words) - sum(w in NEGATIVE_WORDS for w in words)) / len(words)


def generate_synthetic(n, seed, config=None, weights=SyntheticWeights(), d_visual=35, d_audio=74):
    """Deterministic corpus whose labels depend on all three modalities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if config is not None:
        d_visual, d_audio = config.d_visual, config.d_audio
    rng = np.random.default_rng(seed)
    u_v = np.full(d_visual, 1.0 / math.sqrt(d_visual))
    u_a = np.full(d_audio, 1.0 / math.sqrt(d_audio))
    samples = []
    for i in range(n):
        n_words = int(rng.integers(weights.min_words, weights.max_words + 1))
        words = []
        for _ in range(n_words):
            if rng.random() < weights.keyword_rate:
                pool = POSITIVE_WORDS if rng.random() < 0.5 else NEGATIVE_WORDS
            else:
                pool = NEUTRAL_WORDS
            words.append(pool[int(rng.integers(len(pool)))])
        text = " ".join(words)
        visual = rng.normal(size=(n_words, d_visual)) + rng.normal() * u_v
        acoustic = rng.normal(size=(n_words, d_audio)) + rng.normal() * u_a
        raw = (weights.text * text_score(text) + weights.visual * float(visual.mean(axis=0) @ u_v)
               + weights.audio * float(acoustic.mean(axis=0) @ u_a))
        samples.append(MultimodalSample(f"syn-{seed}-{i:05d}", text, visual, acoustic,
                                        float(np.clip(raw, LABEL_MIN, LABEL_MAX))))
    return samples


def split_synthetic(samples, dev_fraction=0.2):
    n_dev = max(1, int(round(len(samples) * dev_fraction))) if len(samples) > 1 else 0
    return samples[: len(samples) - n_dev], samples[len(samples) - n_dev:]


def resolve_vocab(config):
    """Load the configured vocabulary and return it with a config whose vocab_size matches."""
    vocab = synthetic_vocab() if not config.vocab else Vocabulary.load(config.vocab)
    if config.vocab_size != len(vocab):
        config = config.replace(vocab_size=len(vocab))
    return config, vocab


# ----------------------------------------------------------------- batching

@dataclass
class Example:
    """A sample after tokenisation."""
    id: str
    encoded: EncodedText
    visual: np.ndarray
    acoustic: np.ndarray
    label: float


def prepare(samples, vocab, max_len):
    return [Example(s.id, encode(s.text, vocab, max_len), s.visual, s.acoustic, s.label) for s in samples]


@dataclass
class Batch:
    ids: list
    token_ids: np.ndarray      # [B, L] int64, [PAD]-filled
    token_mask: np.ndarray     # [B, L] bool
    visual: np.ndarray         # [B, F, d_visual], zero-padded
    visual_mask: np.ndarray    # [B, F] bool
    acoustic: np.ndarray       # [B, F, d_audio]
    acoustic_mask: np.ndarray  # [B, F] bool
    labels: np.ndarray         # [B]

    def __len__(self):
        return len(self.labels)

    def sample_inputs(self, b):
        """Unpadded (token_ids, visual, acoustic) of sample ``b``."""
        return (self.token_ids[b][self.token_mask[b]], self.visual[b][self.visual_mask[b]],
                self.acoustic[b][self.acoustic_mask[b]])


def _pad_frames(seqs, cap, dim):
    width = min(max((len(s) for s in seqs), default=0), cap)
    out = np.zeros((len(seqs), width, dim))
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        k = min(len(s), width)
        out[i, :k] = s[:k]
        mask[i, :k] = True
    return out, mask


def collate_batch(examples, max_len=None, max_frames=None, pad_id=0):
    """Right-pad to the longest member, capped at ``max_len``/``max_frames``."""
    if not examples:
        raise ValueError("cannot collate an empty batch")
    lengths = [e.encoded.length for e in examples]
    width = max(lengths) if max_len is None else min(max(lengths), max_len)
    token_ids = np.full((len(examples), width), pad_id, dtype=np.int64)
    token_mask = np.zeros((len(examples), width), dtype=bool)
    for i, (e, n) in enumerate(zip(examples, lengths)):
        k = min(n, width)
        token_ids[i, :k] = e.encoded.token_ids[:k]
        token_mask[i, :k] = True
    cap = max_frames if max_frames is not None else 1 << 30
    d_v = examples[0].visual.shape[1]
    d_a = examples[0].acoustic.shape[1]
    visual, visual_mask = _pad_frames([e.visual for e in examples], cap, d_v)
    acoustic, acoustic_mask = _pad_frames([e.acoustic for e in examples], cap, d_a)
    return Batch([e.id for e in examples], token_ids, token_mask, visual, visual_mask,
                 acoustic, acoustic_mask, np.array([e.label for e in examples], dtype=np.float64))


def iterate_batches(examples, batch_size, rng=None, max_len=None, max_frames=None):
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        yield collate_batch([examples[i] for i in order[start:start + batch_size]], max_len, max_frames)
