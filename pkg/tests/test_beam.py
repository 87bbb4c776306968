import numpy as np
import pytest
from scipy.special import log_softmax

from voicetitles import vocab as V
from voicetitles.beam import Hypothesis, beam_search, blocks_trigram, greedy_decode, length_penalty
from voicetitles.features import make_example
from voicetitles.vocab import BOS, EOS

A, B, C, D = 7, 8, 9, 10


class TableModel:
    """Next-token log-probabilities looked up from the previous token."""

    def __init__(self, table):
        self.logp = log_softmax(np.asarray(table, dtype=np.float64), axis=1)

    def start(self, example):
        return None, 0

    def step(self, ctx, states, tokens):
        return self.logp[np.asarray(tokens)], [s + 1 for s in states]


@pytest.fixture
def example():
    return make_example("x", "x", V.Vocab(V.SPECIALS + ("x",)))


def _table(seed=0, vocab=12):
    return np.random.default_rng(seed).normal(0, 2.0, (vocab, vocab))


def test_length_penalty_values():
    assert length_penalty(1, 0.95) == 1.0
    assert all(length_penalty(n, 0.0) == 1.0 for n in (1, 5, 50))
    assert length_penalty(7, 0.95) == pytest.approx(2 ** 0.95, rel=1e-15)
    assert length_penalty(7, 0.95) == pytest.approx(1.93187265785, abs=1e-10)


def _hyp(tokens):
    h = Hypothesis([BOS])
    for t in tokens:
        h = h.extend(t, -0.1, None)
    return h


def test_blocks_trigram_short_hypothesis():
    assert not blocks_trigram(Hypothesis([]), A)
    assert not blocks_trigram(Hypothesis([BOS]), A)


def test_blocks_trigram_hand_enumerated():
    h = _hyp([A, B, C, A, B])
    assert blocks_trigram(h, C)
    assert not blocks_trigram(h, D)


def test_trigram_set_matches_consecutive_triples():
    tokens = [A, B, C, A, D, C, A]
    h = _hyp(tokens)
    seq = [BOS] + tokens
    assert h.trigram_set() == {tuple(seq[i:i + 3]) for i in range(len(seq) - 2)}


def test_logprob_never_increases():
    h = Hypothesis([BOS])
    last = 0.0
    for t, lp in ((A, -0.5), (B, 0.0), (C, -2.0)):
        h = h.extend(t, lp, None)
        assert h.logprob <= last
        last = h.logprob


def test_beam_one_equals_greedy(example):
    for seed in range(20):
        model = TableModel(_table(seed))
        assert beam_search(model, example, beam=1) == greedy_decode(model, example)


def test_min_length_forced(example):
    t = _table(1)
    t[:, EOS] = 40.0
    out = beam_search(TableModel(t), example, beam=3, min_len=4)
    assert len(out) == 4


def test_max_length_forced(example):
    t = _table(2)
    t[:, EOS] = -1e9
    out = beam_search(TableModel(t), example, beam=2, min_len=4, max_len=9)
    assert len(out) == 9


def test_cycling_model_never_repeats_a_trigram(example):
    t = np.full((12, 12), -3.0)
    t[BOS, A] = t[A, B] = t[B, C] = t[C, A] = 10.0
    t[:, EOS] = -20.0
    out = beam_search(TableModel(t), example, beam=3, max_len=12)
    grams = [tuple(out[i:i + 3]) for i in range(len(out) - 2)]
    assert len(grams) == len(set(grams))
    assert out[:3] == [A, B, C]


def test_all_blocked_falls_back_and_logs(example, caplog):
    # only A or EOS can follow; once (A, A, A) exists and EOS is barred, nothing is open
    t = np.full((8, 8), -np.inf)
    t[:, A] = 0.0
    t[:, EOS] = 0.0
    out = beam_search(TableModel(t), example, beam=2, min_len=4, max_len=6)
    assert out and len(out) >= 4
    assert "all candidates blocked" in caplog.text


def test_ties_broken_by_lower_token_id(example):
    t = np.zeros((12, 12))
    first = beam_search(TableModel(t), example, beam=3, min_len=4, max_len=4)
    assert first == beam_search(TableModel(t), example, beam=3, min_len=4, max_len=4)
    assert first == [0, 0, 0, 1] == greedy_decode(TableModel(t), example, min_len=4, max_len=4)


def test_length_penalty_decides_between_equal_paths(example):
    # [A] and [A, B, C] both carry probability 0.5; only the length penalty separates them
    t = np.full((12, 12), -1e9)
    t[BOS, A] = 0.0
    t[A, EOS] = np.log(0.5)
    t[A, B] = np.log(0.5)
    t[B, C] = 0.0
    t[C, EOS] = 0.0
    short = beam_search(TableModel(t), example, beam=2, alpha=0.0, min_len=1, max_len=5)
    assert short == [A]
    assert beam_search(TableModel(t), example, beam=2, alpha=2.0, min_len=1, max_len=5) == [A, B, C]


def test_beam_rejects_bad_arguments(example):
    with pytest.raises(ValueError):
        beam_search(TableModel(_table()), example, beam=0)
