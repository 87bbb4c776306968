"""Post-norm transformer layers, BERT-style input embedding, and the summarizer built on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .features import Batch, make_batch

NEG_INF = -1e9


@dataclass
class LayerConfig:
    hidden: int = 64
    heads: int = 4
    ffn: int = 128
    enc_layers: int = 2
    dec_layers: int = 2
    max_positions: int = 128
    dec_ffn: int = 0              # 0: same as ffn

    def __post_init__(self):
        if self.dec_ffn == 0:
            self.dec_ffn = self.ffn
        for key in ("hidden", "heads", "ffn", "dec_ffn", "max_positions"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise ValueError("layer counts must be non-negative")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")


def _layer_params(rng, prefix, H, F, cross):
    p = {}
    blocks = ("self", "cross") if cross else ("self",)
    for blk in blocks:
        for m in ("q", "k", "v", "o"):
            p[f"{prefix}.{blk}.W{m}"] = T.normal_param(rng, (H, H), H)
            p[f"{prefix}.{blk}.b{m}"] = T.constant_param((H,), 0.0)
        p[f"{prefix}.{blk}.ln.g"] = T.constant_param((H,), 1.0)
        p[f"{prefix}.{blk}.ln.b"] = T.constant_param((H,), 0.0)
    p[f"{prefix}.ffn.W1"] = T.normal_param(rng, (H, F), H)
    p[f"{prefix}.ffn.b1"] = T.constant_param((F,), 0.0)
    p[f"{prefix}.ffn.W2"] = T.normal_param(rng, (F, H), F)
    p[f"{prefix}.ffn.b2"] = T.constant_param((H,), 0.0)
    p[f"{prefix}.ffn.ln.g"] = T.constant_param((H,), 1.0)
    p[f"{prefix}.ffn.ln.b"] = T.constant_param((H,), 0.0)
    return p


def embed_input(ids, token_table, pos_table, seg_table, segments=None):
    """Token + position + segment embedding per position; segment A unless ``segments`` given."""
    ids = np.asarray(ids)
    length = ids.shape[-1]
    if length > pos_table.shape[0]:
        raise ValueError(f"sequence length {length} exceeds {pos_table.shape[0]} positions")
    x = T.add(T.embedding_lookup(token_table, ids), T.embedding_lookup(pos_table, np.arange(length)))
    if segments is None:
        return T.add(x, T.reshape(T.embedding_lookup(seg_table, np.zeros(1, dtype=np.int64)),
                                  (seg_table.shape[1],)))
    return T.add(x, T.embedding_lookup(seg_table, segments))


def multi_head_attention(q_in, kv_in, params, prefix, heads, mask_bias=None):
    b, tq, h = q_in.shape
    tk = kv_in.shape[1]
    d = h // heads
    P = params

    def proj(x, m, t):
        return T.reshape(T.linear(x, P[f"{prefix}.W{m}"], P[f"{prefix}.b{m}"]), (b, t, heads, d))

    q = T.transpose(proj(q_in, "q", tq), (0, 2, 1, 3))
    k = T.transpose(proj(kv_in, "k", tk), (0, 2, 3, 1))
    v = T.transpose(proj(kv_in, "v", tk), (0, 2, 1, 3))
    scores = T.scale(T.matmul(q, k), 1.0 / np.sqrt(d))
    if mask_bias is not None:
        scores = T.add(scores, mask_bias)
    ctx = T.matmul(T.softmax(scores), v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, tq, h))
    return T.linear(ctx, P[f"{prefix}.Wo"], P[f"{prefix}.bo"])


def transformer_layer(h_prev, params, prefix, heads, self_mask=None, memory=None, cross_mask=None):
    """LN(h + MHAtt(h)), optional cross-attention block, then LN(h + FFN(h))."""
    P = params
    att = multi_head_attention(h_prev, h_prev, P, f"{prefix}.self", heads, self_mask)
    h = T.layer_norm(T.add(h_prev, att), P[f"{prefix}.self.ln.g"], P[f"{prefix}.self.ln.b"])
    if memory is not None:
        att = multi_head_attention(h, memory, P, f"{prefix}.cross", heads, cross_mask)
        h = T.layer_norm(T.add(h, att), P[f"{prefix}.cross.ln.g"], P[f"{prefix}.cross.ln.b"])
    ff = T.linear(T.gelu(T.linear(h, P[f"{prefix}.ffn.W1"], P[f"{prefix}.ffn.b1"])),
                  P[f"{prefix}.ffn.W2"], P[f"{prefix}.ffn.b2"])
    return T.layer_norm(T.add(h, ff), P[f"{prefix}.ffn.ln.g"], P[f"{prefix}.ffn.ln.b"])


def padding_bias(key_mask, heads, tq):
    """(B, S) 1/0 key mask -> additive (B, heads, tq, S) bias."""
    b, s = key_mask.shape
    bias = np.where(key_mask > 0, 0.0, NEG_INF)[:, None, None, :]
    return T.Tensor(np.broadcast_to(bias, (b, heads, tq, s)))


def causal_bias(b, heads, t, key_mask=None):
    bias = np.triu(np.full((t, t), NEG_INF), k=1)[None, None]
    if key_mask is not None:
        bias = bias + np.where(key_mask > 0, 0.0, NEG_INF)[:, None, None, :]
    return T.Tensor(np.broadcast_to(bias, (b, heads, t, t)))


class TransformerEncoder:
    """Embedding tables plus a stack of self-attention layers under ``prefix``."""

    def __init__(self, vocab_size, config: LayerConfig, rng, prefix="encoder"):
        H = config.hidden
        self.config = config
        self.prefix = prefix
        scale = 1.0 / np.sqrt(H)
        self.params = {
            f"{prefix}.tok": T.Tensor(rng.normal(0, scale, (vocab_size, H)), requires_grad=True),
            f"{prefix}.pos": T.Tensor(rng.normal(0, scale, (config.max_positions, H)), requires_grad=True),
            f"{prefix}.seg": T.Tensor(rng.normal(0, scale, (2, H)), requires_grad=True),
        }
        for i in range(config.enc_layers):
            self.params.update(_layer_params(rng, f"{prefix}.layer{i}", H, config.ffn, cross=False))

    def embed(self, ids, segments=None):
        P = self.params
        return embed_input(ids, P[f"{self.prefix}.tok"], P[f"{self.prefix}.pos"], P[f"{self.prefix}.seg"],
                           segments)

    def __call__(self, ids, mask, segments=None):
        ids = np.asarray(ids)
        h = self.embed(ids, segments)
        bias = padding_bias(mask, self.config.heads, ids.shape[1])
        for i in range(self.config.enc_layers):
            h = transformer_layer(h, self.params, f"{self.prefix}.layer{i}", self.config.heads, bias)
        return h


class TransformerSummarizer:
    """Encoder-decoder transformer. ``family`` only names parameters and optimizer groups."""

    def __init__(self, vocab_size, config=None, family="bertsum", seed=0):
        self.vocab_size = vocab_size
        self.config = config or LayerConfig()
        self.family = family
        c = self.config
        rng = np.random.default_rng(seed)
        self.encoder = TransformerEncoder(vocab_size, c, rng, prefix=f"{family}.encoder")
        H = c.hidden
        dp = f"{family}.decoder"
        scale = 1.0 / np.sqrt(H)
        dec = {
            f"{dp}.tok": T.Tensor(rng.normal(0, scale, (vocab_size, H)), requires_grad=True),
            f"{dp}.pos": T.Tensor(rng.normal(0, scale, (c.max_positions, H)), requires_grad=True),
            f"{dp}.out.b": T.constant_param((vocab_size,), 0.0),
        }
        for i in range(c.dec_layers):
            dec.update(_layer_params(rng, f"{dp}.layer{i}", H, c.dec_ffn, cross=True))
        self.params = {**self.encoder.params, **dec}
        for name, t in self.params.items():
            t.name = name
        self._dp = dp

    def group_of(self, name):
        return "encoder" if ".encoder." in name else "decoder"

    def load_encoder(self, arrays, source_prefix="encoder"):
        """Copy pretrained encoder arrays (``<source_prefix>.*``) into this model's encoder.

        The decoder token table, which doubles as the output projection,
        starts from the same pretrained token embeddings.
        """
        ours = self.encoder.prefix
        loaded = 0
        for name, arr in arrays.items():
            if not name.startswith(source_prefix + "."):
                continue
            target = ours + name[len(source_prefix):]
            if target not in self.params:
                raise ValueError(f"pretrained parameter {name} has no counterpart {target}")
            if self.params[target].shape != arr.shape:
                raise ValueError(f"shape mismatch for {target}: {self.params[target].shape} vs {arr.shape}")
            self.params[target].data[...] = arr
            loaded += 1
        if not loaded:
            raise ValueError(f"no parameters under {source_prefix!r} in the pretrained checkpoint")
        self.params[f"{self._dp}.tok"].data[...] = self.params[f"{ours}.tok"].data
        return loaded

    def encode(self, ids, mask=None):
        ids = np.asarray(ids)
        if mask is None:
            mask = np.ones(ids.shape)
        return self.encoder(ids, mask)

    def decoder_logits(self, prefix_ids, z, src_mask):
        prefix_ids = np.asarray(prefix_ids)
        if prefix_ids.ndim != 2 or prefix_ids.shape[1] == 0:
            raise ValueError("decoder prefix must be non-empty (it starts with [BOS])")
        c, P, dp = self.config, self.params, self._dp
        b, t = prefix_ids.shape
        if t > c.max_positions:
            raise ValueError(f"target length {t} exceeds {c.max_positions} positions")
        h = T.add(T.embedding_lookup(P[f"{dp}.tok"], prefix_ids),
                  T.embedding_lookup(P[f"{dp}.pos"], np.arange(t)))
        self_bias = causal_bias(b, c.heads, t)
        cross_bias = padding_bias(src_mask, c.heads, t)
        for i in range(c.dec_layers):
            h = transformer_layer(h, P, f"{dp}.layer{i}", c.heads, self_bias, z, cross_bias)
        # output projection shares the decoder token table
        return T.linear(h, T.transpose(P[f"{dp}.tok"], (1, 0)), P[f"{dp}.out.b"])

    def decode_logits(self, prefix_ids, z, src_mask=None):
        """Next-token distributions (softmax) at every prefix position."""
        if src_mask is None:
            src_mask = np.ones(z.shape[:2])
        return T.softmax(self.decoder_logits(prefix_ids, z, src_mask))

    def loss(self, batch: Batch):
        z = self.encode(batch.src, batch.src_mask)
        logp = T.log_softmax(self.decoder_logits(batch.tgt_in, z, batch.src_mask))
        nll = T.neg(T.pick(logp, batch.plain_targets()))
        return T.scale(T.total(T.mul(nll, T.Tensor(batch.tgt_mask))), 1.0 / batch.tgt_mask.sum())

    # ------------------------------------------------------------------
    # incremental decoding: the state is the token prefix

    def start(self, example):
        batch = make_batch([example], self.vocab_size)
        z = self.encode(batch.src, batch.src_mask)
        return {"z": z.data, "mask": batch.src_mask}, []

    def step(self, ctx, states, tokens):
        prefixes = [list(s) + [int(tok)] for s, tok in zip(states, tokens)]
        n = len(prefixes)
        z = T.Tensor(np.repeat(ctx["z"], n, axis=0))
        mask = np.repeat(ctx["mask"], n, axis=0)
        logits = self.decoder_logits(np.array(prefixes), z, mask)
        logp = T.log_softmax(logits).data[:, -1, :]
        return logp, prefixes
