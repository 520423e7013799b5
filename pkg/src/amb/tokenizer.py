"""Uncased WordPiece tokenisation with BERT special tokens.

Vocabulary file format: UTF-8 text, one token per line, the line number
(0-based) is the id. ``[PAD]`` must be on the first line and each of
``[PAD] [UNK] [CLS] [SEP] [MASK]`` must appear exactly once.
"""
from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass, field

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
_PUNCT = set(string.punctuation)


class VocabularyError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens):
        tokens = list(tokens)
        if not tokens or tokens[0] != PAD:
            raise VocabularyError("vocabulary must list [PAD] first")
        ids = {}
        for i, tok in enumerate(tokens):
            if tok in ids:
                raise VocabularyError(f"token {tok!r} appears twice (ids {ids[tok]} and {i})")
            ids[tok] = i
        for special in SPECIAL_TOKENS:
            if special not in ids:
                raise VocabularyError(f"vocabulary lacks special token {special}")
        self.tokens = tokens
        self.ids = ids
        self.special_ids = frozenset(ids[s] for s in SPECIAL_TOKENS)
        self.pad_id, self.unk_id = ids[PAD], ids[UNK]
        self.cls_id, self.sep_id, self.mask_id = ids[CLS], ids[SEP], ids[MASK]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.ids

    def id_of(self, token):
        return self.ids.get(token, self.unk_id)

    def regular_ids(self):
        """Ids of all non-special tokens, ascending."""
        return [i for i in range(len(self.tokens)) if i not in self.special_ids]

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\r\n") for line in fh)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def from_words(cls, words):
        """Special tokens, then ``words``, then single letters/digits and their ``##`` forms.

        The character entries mean any lowercase ASCII word can be spelled out
        instead of falling back to [UNK].
        """
        tokens = list(SPECIAL_TOKENS)
        seen = set(tokens)
        chars = string.ascii_lowercase + string.digits
        for tok in [*words, *string.punctuation, *chars, *("##" + c for c in chars)]:
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
        return cls(tokens)


@dataclass
class EncodedText:
    token_ids: list
    attention_mask: list
    token_strings: list = field(default_factory=list)

    @property
    def length(self):
        return sum(self.attention_mask)

    def copy(self):
        return EncodedText(list(self.token_ids), list(self.attention_mask), list(self.token_strings))


def _fold(text):
    text = unicodedata.normalize("NFD", text)
    return "".join(c for c in text if unicodedata.category(c) != "Mn")


def basic_tokenize(text):
    """Lowercase, strip accents, split on whitespace and ASCII punctuation."""
    words = []
    for chunk in _fold(text).lower().split():
        current = []
        for ch in chunk:
            if ch in _PUNCT:
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
            elif unicodedata.category(ch)[0] != "C":
                current.append(ch)
        if current:
            words.append("".join(current))
    return words


def wordpiece_tokenize(word, vocab, max_chars=100):
    """Greedy longest-match-first segmentation; any unmatched piece makes the word [UNK]."""
    if len(word) > max_chars:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end] if start == 0 else "##" + word[start:end]
            if piece in vocab:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def encode(text, vocab, max_len):
    """[CLS] subwords [SEP] [PAD]..., exactly ``max_len`` long."""
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    subwords = [p for w in basic_tokenize(text) for p in wordpiece_tokenize(w, vocab)]
    subwords = subwords[: max_len - 2]
    strings = [CLS, *subwords, SEP]
    n_valid = len(strings)
    strings += [PAD] * (max_len - n_valid)
    return EncodedText(
        token_ids=[vocab.id_of(s) for s in strings],
        attention_mask=[True] * n_valid + [False] * (max_len - n_valid),
        token_strings=strings,
    )


def detokenize(subwords):
    out = []
    for piece in subwords:
        if piece.startswith("##") and out:
            out[-1] += piece[2:]
        else:
            out.append(piece)
    return " ".join(out)
