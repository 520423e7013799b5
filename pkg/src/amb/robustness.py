"""Input-corruption protocol: token deletion ([UNK] substitution), random token
replacement, and multiplicative Gaussian noise on visual frames.

``rate`` is always the independent per-element corruption probability.
Special tokens, masks and sequence lengths are never changed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import Tensor
from .trainer import evaluate

KINDS = ("delete", "replace", "visual_noise")
DEFAULT_RATES = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0)
SWEEP_FIELDS = ("kind", "rate", "run", "seed", "corr", "mae")


def _check_rate(rate):
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"corruption rate must lie in [0, 1], got {rate}")


def _corruptible(encoded, vocab):
    ids = encoded.token_ids
    return [i for i, (tok, valid) in enumerate(zip(ids, encoded.attention_mask))
            if valid and tok not in vocab.special_ids]


def corrupt_delete(encoded, rate, rng, vocab):
    """Each regular token becomes [UNK] with probability ``rate``."""
    _check_rate(rate)
    out = encoded.copy()
    positions = _corruptible(encoded, vocab)
    hit = rng.random(len(positions)) < rate
    for pos, h in zip(positions, hit):
        if h:
            out.token_ids[pos] = vocab.unk_id
            if out.token_strings:
                out.token_strings[pos] = vocab.tokens[vocab.unk_id]
    return out


def corrupt_replace(encoded, rate, vocab, rng):
    """Each regular token is swapped, with probability ``rate``, for a uniform draw
    over the non-special vocabulary."""
    _check_rate(rate)
    pool = vocab.regular_ids()
    if not pool:
        raise ValueError("vocabulary has no non-special tokens to draw from")
    out = encoded.copy()
    positions = _corruptible(encoded, vocab)
    hit = rng.random(len(positions)) < rate
    draws = rng.integers(len(pool), size=len(positions))
    for pos, h, d in zip(positions, hit, draws):
        if h:
            out.token_ids[pos] = pool[d]
            if out.token_strings:
                out.token_strings[pos] = vocab.tokens[pool[d]]
    return out


def corrupt_visual(frames, rate, sigma, rng):
    """Selected frames (probability ``rate`` each) are scaled elementwise by N(1, sigma^2) factors."""
    _check_rate(rate)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    as_tensor = isinstance(frames, Tensor)
    arr = frames.data if as_tensor else np.asarray(frames)
    selected = rng.random(arr.shape[0]) < rate
    factors = rng.normal(1.0, sigma, size=arr.shape)
    noisy = np.where(selected[:, None], arr * factors, arr).astype(arr.dtype, copy=False)
    return Tensor(noisy) if as_tensor else noisy


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    rate: float
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; valid: {', '.join(KINDS)}")
        _check_rate(self.rate)


def corrupt_examples(examples, spec, vocab):
    """Fresh corrupted copies of ``examples``; a pure function of (examples, spec)."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for e in examples:
        if spec.kind == "delete":
            out.append(replace(e, encoded=corrupt_delete(e.encoded, spec.rate, rng, vocab)))
        elif spec.kind == "replace":
            out.append(replace(e, encoded=corrupt_replace(e.encoded, spec.rate, vocab, rng)))
        else:
            out.append(replace(e, visual=corrupt_visual(e.visual, spec.rate, spec.sigma, rng)))
    return out


@dataclass
class SweepResult:
    kind: str
    rates: list
    seeds: list
    corr: list = field(default_factory=list)   # per rate: list of per-run values
    mae: list = field(default_factory=list)

    def mean_corr(self, i):
        return float(np.mean(self.corr[i]))

    def mean_mae(self, i):
        return float(np.mean(self.mae[i]))


def robustness_sweep(model, examples, vocab, kinds=KINDS, rates=DEFAULT_RATES, runs=3, base_seed=0,
                     sigma=1.0, batch_size=32):
    """For each kind x rate x run: corrupt with seed ``base_seed + run`` and evaluate."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = [base_seed + r for r in range(runs)]
    results = {}
    for kind in kinds:
        res = SweepResult(kind, list(rates), seeds)
        for rate in rates:
            corrs, maes = [], []
            for seed in seeds:
                corrupted = corrupt_examples(examples, CorruptionSpec(kind, rate, sigma, seed), vocab)
                report = evaluate(model, corrupted, batch_size)
                corrs.append(report.corr)
                maes.append(report.mae)
            res.corr.append(corrs)
            res.mae.append(maes)
        results[kind] = res
    return results


def sweep_rows(results):
    """CSV rows: one per (kind, rate, run) and a ``mean`` row per (kind, rate)."""
    rows = []
    for kind, res in results.items():
        for i, rate in enumerate(res.rates):
            for run, seed in enumerate(res.seeds):
                rows.append([kind, repr(float(rate)), run, seed, repr(res.corr[i][run]), repr(res.mae[i][run])])
            rows.append([kind, repr(float(rate)), "mean", "", repr(res.mean_corr(i)), repr(res.mean_mae(i))])
    return rows


def write_sweep_csv(results, path_or_file):
    def dump(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        w.writerows(sweep_rows(results))

    if hasattr(path_or_file, "write"):
        dump(path_or_file)
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as fh:
            dump(fh)
