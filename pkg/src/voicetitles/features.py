"""Turn title pairs into padded id batches with per-example source vocabularies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import BOS, CLS, EOS, PAD, SEP, UNK, Vocab, encode_words

MAX_SRC = 62
MAX_TGT = 50


@dataclass
class Example:
    src: list            # [CLS] ... [SEP]; uncovered words are [UNK]
    src_ext: list        # same, uncovered words mapped to len(vocab) + k
    oovs: list           # surface words behind the extended ids
    tgt_in: list         # [BOS] + target, [UNK] for words outside the vocab
    tgt_out: list        # target + [EOS] over the extended vocabulary
    source: str = ""
    target: str = ""


def source_ids(text, vocab: Vocab, max_src=MAX_SRC):
    """Framed source ids, extended ids and the per-example OOV list."""
    src, ext, oovs = [CLS], [CLS], []
    n = len(vocab)
    for word, pieces in encode_words(text, vocab):
        if pieces == [UNK]:
            if word not in oovs:
                oovs.append(word)
            src.append(UNK)
            ext.append(n + oovs.index(word))
        else:
            src.extend(pieces)
            ext.extend(pieces)
    src, ext = src[:max_src - 1] + [SEP], ext[:max_src - 1] + [SEP]
    return src, ext, oovs


def make_example(source, target, vocab: Vocab, max_src=MAX_SRC, max_tgt=MAX_TGT):
    src, ext, oovs = source_ids(source, vocab, max_src)
    n = len(vocab)
    tgt_plain, tgt_ext = [], []
    for word, pieces in encode_words(target, vocab):
        if pieces == [UNK]:
            tgt_plain.append(UNK)
            tgt_ext.append(n + oovs.index(word) if word in oovs else UNK)
        else:
            tgt_plain.extend(pieces)
            tgt_ext.extend(pieces)
    tgt_plain, tgt_ext = tgt_plain[:max_tgt], tgt_ext[:max_tgt]
    return Example(src, ext, oovs, [BOS] + tgt_plain, tgt_ext + [EOS], source, target)


@dataclass
class Batch:
    src: np.ndarray          # (B, S) int
    src_ext: np.ndarray      # (B, S) int
    src_mask: np.ndarray     # (B, S) float, 1 on real tokens
    tgt_in: np.ndarray       # (B, T) int
    tgt_out: np.ndarray      # (B, T) int, extended ids
    tgt_mask: np.ndarray     # (B, T) float
    n_oov: int
    vocab_size: int

    @property
    def size(self):
        return self.src.shape[0]

    def plain_targets(self):
        out = self.tgt_out.copy()
        out[out >= self.vocab_size] = UNK
        return out


def _pad(rows, fill=PAD):
    width = max(len(r) for r in rows)
    arr = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        arr[i, :len(r)] = r
    return arr


def make_batch(examples, vocab_size):
    src = _pad([e.src for e in examples])
    tgt_out = _pad([e.tgt_out for e in examples])
    return Batch(
        src=src,
        src_ext=_pad([e.src_ext for e in examples]),
        src_mask=(_pad([[1] * len(e.src) for e in examples], 0)).astype(np.float64),
        tgt_in=_pad([e.tgt_in for e in examples]),
        tgt_out=tgt_out,
        tgt_mask=(_pad([[1] * len(e.tgt_out) for e in examples], 0)).astype(np.float64),
        n_oov=max(len(e.oovs) for e in examples),
        vocab_size=vocab_size,
    )
