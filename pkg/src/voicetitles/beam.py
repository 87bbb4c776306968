"""Beam search with length normalization, trigram blocking and length bounds.

A decodable model exposes ``start(example) -> (ctx, state)`` and
``step(ctx, states, tokens) -> (log_probs, new_states)``, where
``log_probs`` has one row per hypothesis over the (possibly extended)
vocabulary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS

log = logging.getLogger(__name__)


def length_penalty(length, alpha):
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class Hypothesis:
    tokens: list                      # starts with [BOS]
    logprob: float = 0.0
    state: object = None
    alive: bool = True
    trigrams: dict = field(default_factory=dict)   # (a, b) -> set of c

    def extend(self, token, logprob, state):
        grams = self.trigrams
        if len(self.tokens) >= 2:
            key = (self.tokens[-2], self.tokens[-1])
            grams = {k: set(v) for k, v in grams.items()}
            grams.setdefault(key, set()).add(token)
        return Hypothesis(self.tokens + [token], self.logprob + logprob, state, token != EOS, grams)

    def trigram_set(self):
        return {(a, b, c) for (a, b), cs in self.trigrams.items() for c in cs}

    @property
    def length(self):
        """Generated tokens, excluding [BOS] and a final [EOS]."""
        n = len(self.tokens) - 1
        return n - 1 if self.tokens[-1] == EOS and n > 0 else n


def blocks_trigram(hyp: Hypothesis, candidate):
    if len(hyp.tokens) < 2:
        return False
    return candidate in hyp.trigrams.get((hyp.tokens[-2], hyp.tokens[-1]), ())


def _normalized(hyp, alpha):
    return hyp.logprob / length_penalty(max(hyp.length, 1), alpha)


def beam_search(model, example, beam=5, alpha=0.95, min_len=4, max_len=50, block_trigrams=True):
    """Token ids of the best finished hypothesis, without [BOS] / [EOS]."""
    if beam < 1:
        raise ValueError(f"beam must be at least 1, got {beam}")
    if not example.src:
        raise ValueError("empty source")
    ctx, state0 = model.start(example)
    alive = [Hypothesis([BOS], 0.0, state0)]
    finished = []
    while alive:
        gen_len = len(alive[0].tokens) - 1
        if gen_len >= max_len:
            finished.extend(Hypothesis(h.tokens + [EOS], h.logprob, None, False, h.trigrams) for h in alive)
            break
        logp, states = model.step(ctx, [h.state for h in alive], [h.tokens[-1] for h in alive])
        logp = np.array(logp, dtype=np.float64)
        if gen_len < min_len:
            logp[:, EOS] = -np.inf
        scores = np.array([h.logprob for h in alive])[:, None] + logp
        blocked = np.zeros_like(scores, dtype=bool)
        if block_trigrams:
            for r, h in enumerate(alive):
                if len(h.tokens) >= 2:
                    for c in h.trigrams.get((h.tokens[-2], h.tokens[-1]), ()):
                        blocked[r, c] = True
        open_scores = np.where(blocked, -np.inf, scores)
        rows, toks = np.nonzero(np.isfinite(open_scores))
        if rows.size == 0:
            rows, toks = np.nonzero(np.isfinite(scores))
            log.warning("all candidates blocked at length %d; keeping a blocked one", gen_len)
            open_scores = scores
            if rows.size == 0:
                finished.extend(Hypothesis(h.tokens + [EOS], h.logprob, None, False, h.trigrams)
                                for h in alive)
                break
        vals = open_scores[rows, toks]
        # highest score first; ties go to the earlier hypothesis, then the lower token id
        order = np.lexsort((toks, rows, -vals))[:beam]
        nxt = []
        for k in order:
            r, tok = int(rows[k]), int(toks[k])
            hyp = alive[r].extend(tok, float(logp[r, tok]), states[r])
            (nxt if hyp.alive else finished).append(hyp)
        alive = nxt
        if len(finished) >= beam:
            break
    best = max(finished, key=lambda h: (_normalized(h, alpha), -len(h.tokens)))
    return [t for t in best.tokens[1:] if t != EOS]


def greedy_decode(model, example, min_len=4, max_len=50, block_trigrams=True):
    """Argmax decoding under the same length and trigram constraints."""
    ctx, state = model.start(example)
    hyp = Hypothesis([BOS], 0.0, state)
    while hyp.length < max_len:
        logp, states = model.step(ctx, [hyp.state], [hyp.tokens[-1]])
        row = np.array(logp[0], dtype=np.float64)
        if hyp.length < min_len:
            row[EOS] = -np.inf
        open_row = row.copy()
        if block_trigrams and len(hyp.tokens) >= 2:
            for c in hyp.trigrams.get((hyp.tokens[-2], hyp.tokens[-1]), ()):
                open_row[c] = -np.inf
        if not np.isfinite(open_row).any():
            log.warning("all candidates blocked at length %d; keeping a blocked one", hyp.length)
            open_row = row
        tok = int(np.argmax(open_row))
        hyp = hyp.extend(tok, float(row[tok]), states[0])
        if tok == EOS:
            break
    return [t for t in hyp.tokens[1:] if t != EOS]
