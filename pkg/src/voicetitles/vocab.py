"""Subword vocabulary with greedy longest-match-first segmentation."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

PAD, UNK, CLS, SEP, MASK, BOS, EOS = range(7)
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]")
CONT = "##"

_PIECE = re.compile(r"[a-z0-9]+|[^a-z0-9]")
# Shortest stem a derived suffix may hang off.
_MIN_STEM = 3


def _pieces(word):
    """Alphanumeric runs and single punctuation characters of one word."""
    parts = _PIECE.findall(word)
    return [parts[0]] + [CONT + p for p in parts[1:]] if parts else []


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self._cache: dict[str, list[int]] = {}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __getitem__(self, token):
        return self.token_to_id.get(token, UNK)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))

    def encode_word(self, word):
        """Segment one lower-cased word; [UNK] alone when any part is uncovered."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        ids = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end] if start == 0 else CONT + word[start:end]
                tid = self.token_to_id.get(piece)
                if tid is not None and tid >= len(SPECIALS):
                    found = tid
                    break
                end -= 1
            if found is None:
                ids = [UNK]
                break
            ids.append(found)
            start = end
        self._cache[word] = ids
        return ids


def build_vocab(corpus: Iterable[str], max_size: int = 30000, min_freq: int = 1) -> Vocab:
    """Frequency-ranked whole words plus derived continuation units.

    Each whitespace word contributes its leading alphanumeric run as a word
    token and any following runs or punctuation as ``##`` units. Derived
    suffix units come from splitting words whose prefix is itself a kept
    word (``bars`` -> ``bar`` + ``##s``); they are kept when at least two
    distinct words yield them.
    """
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed {len(SPECIALS)}, got {max_size}")
    if min_freq < 1:
        raise ValueError(f"min_freq must be at least 1, got {min_freq}")
    counts: Counter = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        for word in line.lower().split():
            counts.update(_pieces(word))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = {t: c for t, c in counts.items() if c >= min_freq and t not in SPECIALS}
    words = {t for t in kept if not t.startswith(CONT)}
    suffix_freq: Counter = Counter()
    suffix_types: Counter = Counter()
    for word, c in counts.items():
        if word.startswith(CONT):
            continue
        for k in range(_MIN_STEM, len(word)):
            if word[:k] in words:
                suffix = CONT + word[k:]
                suffix_freq[suffix] += c
                suffix_types[suffix] += 1
    for suffix, types in suffix_types.items():
        if types >= 2 and suffix_freq[suffix] >= min_freq and suffix not in kept:
            kept[suffix] = suffix_freq[suffix]
    ranked = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = list(SPECIALS) + [t for t, _ in ranked[:max_size - len(SPECIALS)]]
    return Vocab(tokens)


def encode(text: str, vocab: Vocab) -> list[int]:
    ids = []
    for word in text.lower().split():
        ids.extend(vocab.encode_word(word))
    return ids


def encode_words(text: str, vocab: Vocab) -> list[tuple[str, list[int]]]:
    """Per-word segmentation, keeping the lower-cased surface word."""
    return [(w, vocab.encode_word(w)) for w in text.lower().split()]


def id_to_piece(i, vocab: Vocab, oovs=()):
    if 0 <= i < len(vocab):
        return vocab.id_to_token[i]
    j = i - len(vocab)
    if 0 <= j < len(oovs):
        return oovs[j]
    raise ValueError(f"token id {i} outside vocabulary of size {len(vocab)}"
                     + (f" + {len(oovs)} source words" if oovs else ""))


def decode(ids: Iterable[int], vocab: Vocab, oovs=()) -> str:
    """Join pieces back into words; specials are dropped.

    Ids past the base vocabulary name per-example source words in ``oovs``.
    """
    words: list[str] = []
    for i in ids:
        i = int(i)
        piece = id_to_piece(i, vocab, oovs)
        if i < len(SPECIALS):
            continue
        if piece.startswith(CONT) and words:
            words[-1] += piece[len(CONT):]
        else:
            words.append(piece[len(CONT):] if piece.startswith(CONT) else piece)
    return " ".join(words)
