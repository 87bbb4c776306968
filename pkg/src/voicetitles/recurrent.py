"""LSTM encoder-decoder with additive attention, pointer-generator mixing and coverage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .features import Batch, make_batch
from .vocab import UNK

NEG_INF = -1e9


@dataclass
class RecurrentConfig:
    emb: int = 32
    hidden: int = 64
    attn: int = 64
    coverage_weight: float = 1.0


@dataclass
class EncoderOutput:
    hidden_states: T.Tensor   # (B, S, H)
    projected: T.Tensor       # (B, S, A): W_h h_i + b_attn, reused every step
    final_state: T.Tensor     # (B, 2H) packed [h | c]
    mask_bias: T.Tensor       # (B, S): 0 on tokens, NEG_INF on padding


def attend(enc: EncoderOutput, s_t, w_s, v):
    """Additive attention; returns the distribution over source positions and the context vector."""
    b, src_len, hidden = enc.hidden_states.shape
    if src_len == 0:
        raise ValueError("attend: empty source")
    feat = T.expand(T.matmul(s_t, w_s), 1, src_len)
    scores = T.reshape(T.matmul(T.tanh(T.add(enc.projected, feat)), v), (b, src_len))
    a_t = T.softmax(T.add(scores, enc.mask_bias))
    context = T.matmul(T.reshape(a_t, (b, 1, src_len)), enc.hidden_states)
    return a_t, T.reshape(context, (b, hidden))


def generation_prob(h_star, s_t, x_t, w_h, w_s, w_x, b_ptr):
    """Probability of generating from the vocabulary rather than copying, shape (B, 1)."""
    z = T.add(T.add(T.matmul(h_star, w_h), T.matmul(s_t, w_s)), T.linear(x_t, w_x, b_ptr))
    return T.sigmoid(z)


def final_distribution(p_vocab, a_t, p_gen, src_ids, extended_size):
    return T.pointer_mix(p_vocab, a_t, p_gen, src_ids, extended_size)


def coverage_loss(a_t, c_t):
    """Per-row overlap between the current attention and the running coverage."""
    return T.sum_last(T.minimum(a_t, c_t))


class RecurrentSummarizer:
    """Plain seq2seq+attention (``pointer=False``) or pointer-generator.

    ``coverage_weight`` scales the coverage penalty; zero disables it, which
    is how the first of the two coverage training phases runs.
    """

    def __init__(self, vocab_size, pointer=True, config=None, seed=0, coverage=False):
        self.vocab_size = vocab_size
        self.pointer = pointer
        self.config = config or RecurrentConfig()
        self.coverage = coverage
        self.force_generation = False
        self.prefix = "ptrnet" if pointer else "seq2seq"
        c = self.config
        rng = np.random.default_rng(seed)
        E, H, A, V = c.emb, c.hidden, c.attn, vocab_size
        forget = np.zeros(4 * H)
        forget[H:2 * H] = 1.0
        p = {
            "embed": T.uniform_param(rng, (V, E)),
            "enc.W": T.uniform_param(rng, (E + H, 4 * H)),
            "enc.b": T.Tensor(forget.copy(), requires_grad=True),
            "dec.W": T.uniform_param(rng, (E + H, 4 * H)),
            "dec.b": T.Tensor(forget.copy(), requires_grad=True),
            "attn.W_h": T.normal_param(rng, (H, A), H),
            "attn.W_s": T.normal_param(rng, (H, A), H),
            "attn.b": T.constant_param((A,), 0.0),
            "attn.v": T.normal_param(rng, (A, 1), A),
            "out.W1": T.normal_param(rng, (2 * H, H), 2 * H),
            "out.b1": T.constant_param((H,), 0.0),
            "out.W2": T.normal_param(rng, (H, V), H),
            "out.b2": T.constant_param((V,), 0.0),
        }
        if pointer:
            p.update({
                "ptr.w_h": T.normal_param(rng, (H, 1), H),
                "ptr.w_s": T.normal_param(rng, (H, 1), H),
                "ptr.w_x": T.normal_param(rng, (E, 1), E),
                "ptr.b": T.constant_param((1,), 0.0),
            })
        self.params = {f"{self.prefix}.{k}": v for k, v in p.items()}
        for name, t in self.params.items():
            t.name = name

    def _p(self, key):
        return self.params[f"{self.prefix}.{key}"]

    def group_of(self, name):
        return "encoder" if ".enc." in name or name.endswith(".embed") else "decoder"

    # ------------------------------------------------------------------
    def encode(self, src, src_mask):
        src = np.asarray(src)
        b, s = src.shape
        H = self.config.hidden
        emb, W, bias = self._p("embed"), self._p("enc.W"), self._p("enc.b")
        state = T.Tensor(np.zeros((b, 2 * H)))
        outputs = []
        for t in range(s):
            x = T.embedding_lookup(emb, src[:, t])
            new = T.lstm_cell(x, state, W, bias)
            m = src_mask[:, t:t + 1]
            if m.all():
                state = new
            else:
                keep = np.repeat(m, 2 * H, axis=1)
                state = T.add(T.mul(new, T.Tensor(keep)), T.mul(state, T.Tensor(1.0 - keep)))
            outputs.append(T.reshape(T.slice_last(state, 0, H), (b, 1, H)))
        states = T.concat(outputs, axis=1) if s > 1 else outputs[0]
        projected = T.linear(states, self._p("attn.W_h"), self._p("attn.b"))
        mask_bias = T.Tensor(np.where(src_mask > 0, 0.0, NEG_INF))
        return EncoderOutput(states, projected, state, mask_bias)

    def _decode_step(self, enc, state, tokens, src_ext, ext_size):
        """One decoder step from input ids; returns (state, distribution, attention)."""
        H = self.config.hidden
        tokens = np.where(np.asarray(tokens) >= self.vocab_size, UNK, tokens)
        x_t = T.embedding_lookup(self._p("embed"), tokens)
        state = T.lstm_cell(x_t, state, self._p("dec.W"), self._p("dec.b"))
        s_t = T.slice_last(state, 0, H)
        a_t, h_star = attend(enc, s_t, self._p("attn.W_s"), self._p("attn.v"))
        hidden = T.linear(T.concat([s_t, h_star]), self._p("out.W1"), self._p("out.b1"))
        p_vocab = T.softmax(T.linear(hidden, self._p("out.W2"), self._p("out.b2")))
        if not self.pointer:
            return state, p_vocab, a_t
        if self.force_generation:
            p_gen = T.Tensor(np.ones((tokens.shape[0], 1)))
        else:
            p_gen = generation_prob(h_star, s_t, x_t, self._p("ptr.w_h"), self._p("ptr.w_s"),
                                    self._p("ptr.w_x"), self._p("ptr.b"))
        return state, final_distribution(p_vocab, a_t, p_gen, src_ext, ext_size), a_t

    def loss(self, batch: Batch):
        """Mean per-token negative log-likelihood, plus weighted coverage when enabled."""
        enc = self.encode(batch.src, batch.src_mask)
        b, steps = batch.tgt_in.shape
        ext_size = self.vocab_size + batch.n_oov if self.pointer else self.vocab_size
        targets = batch.tgt_out if self.pointer else batch.plain_targets()
        if targets.max() >= ext_size:
            raise ValueError(f"gold id {int(targets.max())} outside extended vocabulary of {ext_size}")
        state = enc.final_state
        coverage = T.Tensor(np.zeros(batch.src.shape))
        nll, cov = [], []
        for t in range(steps):
            state, dist, a_t = self._decode_step(enc, state, batch.tgt_in[:, t], batch.src_ext, ext_size)
            nll.append(T.reshape(T.neg(T.log(T.pick(dist, targets[:, t]))), (b, 1)))
            if self.coverage:
                cov.append(T.reshape(coverage_loss(a_t, coverage), (b, 1)))
                coverage = T.add(coverage, a_t)
        mask = T.Tensor(batch.tgt_mask)
        n_tokens = batch.tgt_mask.sum()
        total = T.scale(T.total(T.mul(T.concat(nll), mask)), 1.0 / n_tokens)
        if self.coverage and self.config.coverage_weight:
            cov_total = T.total(T.mul(T.concat(cov), mask))
            total = T.add(total, T.scale(cov_total, self.config.coverage_weight / n_tokens))
        return total

    def attention_trace(self, batch: Batch):
        """Per-step attention distributions and the running coverage before each step."""
        enc = self.encode(batch.src, batch.src_mask)
        ext_size = self.vocab_size + batch.n_oov if self.pointer else self.vocab_size
        state = enc.final_state
        coverage = np.zeros(batch.src.shape)
        attns, covs = [], []
        for t in range(batch.tgt_in.shape[1]):
            state, _, a_t = self._decode_step(enc, state, batch.tgt_in[:, t], batch.src_ext, ext_size)
            covs.append(coverage.copy())
            attns.append(a_t.data)
            coverage = coverage + a_t.data
        return attns, covs

    # ------------------------------------------------------------------
    # incremental decoding

    def start(self, example):
        batch = make_batch([example], self.vocab_size)
        enc = self.encode(batch.src, batch.src_mask)
        ctx = {"enc": enc, "src_ext": batch.src_ext, "n_oov": len(example.oovs), "cache": {}}
        return ctx, enc.final_state.data[0]

    def step(self, ctx, states, tokens):
        n = len(states)
        enc = ctx["enc"]
        rep = ctx["cache"].get(n)
        if rep is None:
            rep = EncoderOutput(
                T.Tensor(np.repeat(enc.hidden_states.data, n, axis=0)),
                T.Tensor(np.repeat(enc.projected.data, n, axis=0)),
                enc.final_state,
                T.Tensor(np.repeat(enc.mask_bias.data, n, axis=0)),
            )
            ctx["cache"][n] = rep
        ext = self.vocab_size + ctx["n_oov"] if self.pointer else self.vocab_size
        src_ext = np.repeat(ctx["src_ext"], n, axis=0)
        state, dist, _ = self._decode_step(rep, T.Tensor(np.stack(states)), np.asarray(tokens),
                                           src_ext, ext)
        with np.errstate(divide="ignore"):
            logp = np.log(dist.data)
        return logp, list(state.data)
