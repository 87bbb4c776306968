"""Finite-difference cases shared by the tensor tests and the acceptance suite."""

import numpy as np

from voicetitles import recurrent, tensor as T
from voicetitles.pretrain import PretrainModel
from voicetitles.transformer import LayerConfig, TransformerSummarizer

FAMILIES = ("seq2seq", "ptrnet", "ptrnet_cov", "transformer", "bertsum", "ebertsum")
TINY_LAYERS = LayerConfig(hidden=8, heads=2, ffn=12, enc_layers=1, dec_layers=1, max_positions=16)
TINY_RECURRENT = recurrent.RecurrentConfig(emb=4, hidden=5, attn=3)


def primitive_cases(rng):
    """(name, function of x, x) covering every primitive with random weights."""
    n = lambda *s: rng.normal(size=s)  # noqa: E731
    w34, w = T.Tensor(n(3, 4)), T.Tensor(n(2, 4))
    bias4 = T.Tensor(n(4))
    gain, beta = T.Tensor(n(4)), T.Tensor(n(4))
    lstm_w = T.Tensor(rng.uniform(-0.5, 0.5, size=(3 + 2, 8)))
    lstm_b = T.Tensor(n(8))
    state = T.Tensor(n(2, 4))
    p_vocab = T.Tensor(rng.dirichlet(np.ones(5), size=2))
    attn = T.Tensor(rng.dirichlet(np.ones(3), size=2))
    src = np.array([[5, 1, 5], [6, 2, 0]])
    other = T.Tensor(n(2, 4))
    batched = T.Tensor(n(2, 3, 2))
    x23 = T.Tensor(n(2, 3))
    wsum = lambda y: T.total(T.mul(y, T.Tensor(np.linspace(-1, 1, y.data.size).reshape(y.shape))))  # noqa: E731
    return [
        ("matmul", lambda x: wsum(T.matmul(x, w34)), n(2, 3)),
        ("matmul_batched", lambda x: wsum(T.matmul(x, batched)), n(2, 2, 3)),
        ("add", lambda x: wsum(T.add(x, bias4)), n(2, 4)),
        ("add_bias", lambda x: wsum(T.add(w, x)), n(4)),
        ("sub", lambda x: wsum(T.sub(w, x)), n(2, 4)),
        ("mul", lambda x: wsum(T.mul(x, w)), n(2, 4)),
        ("scale", lambda x: wsum(T.scale(x, 2.5)), n(2, 4)),
        ("minimum", lambda x: wsum(T.minimum(x, other)), n(2, 4)),
        ("tanh", lambda x: wsum(T.tanh(x)), n(2, 4)),
        ("sigmoid", lambda x: wsum(T.sigmoid(x)), n(2, 4)),
        ("exp", lambda x: wsum(T.exp(x)), n(2, 4)),
        ("log", lambda x: wsum(T.log(x)), rng.uniform(0.5, 2.0, size=(2, 4))),
        ("gelu", lambda x: wsum(T.gelu(x)), n(2, 4)),
        ("softmax", lambda x: wsum(T.softmax(x)), n(2, 4)),
        ("log_softmax", lambda x: wsum(T.log_softmax(x)), n(2, 4)),
        ("concat", lambda x: wsum(T.concat([x, w, x], axis=-1)), n(2, 4)),
        ("embedding_lookup", lambda x: wsum(T.embedding_lookup(x, np.array([[0, 3], [3, 5]]))), n(6, 4)),
        ("layer_norm", lambda x: wsum(T.layer_norm(x, gain, beta)), n(2, 4)),
        ("layer_norm_gain", lambda x: wsum(T.layer_norm(w, x, beta)), n(4)),
        ("lstm_cell_x", lambda x: wsum(T.lstm_cell(x, state, lstm_w, lstm_b)), n(2, 3)),
        ("lstm_cell_state", lambda x: wsum(T.lstm_cell(x23, x, lstm_w, lstm_b)), n(2, 4)),
        ("lstm_cell_weight", lambda x: wsum(T.lstm_cell(x23, state, x, lstm_b)),
         rng.uniform(-0.5, 0.5, size=(5, 8))),
        ("linear", lambda x: wsum(T.linear(w, x, bias4)), n(4, 4)),
        ("reshape", lambda x: wsum(T.tanh(T.reshape(x, (4, 2)))), n(2, 4)),
        ("transpose", lambda x: wsum(T.tanh(T.transpose(x, (1, 0)))), n(2, 4)),
        ("expand", lambda x: wsum(T.tanh(T.expand(x, 1, 3))), n(2, 4)),
        ("sum_last", lambda x: wsum(T.tanh(T.sum_last(x))), n(2, 4)),
        ("slice", lambda x: wsum(T.tanh(T.slice_last(x, 1, 3))), n(2, 4)),
        ("pick", lambda x: wsum(T.tanh(T.pick(x, np.array([1, 3])))), n(2, 4)),
        ("take_rows", lambda x: wsum(T.take_rows(x, np.array([2, 0, 2]))), n(3, 4)),
        ("pointer_mix_gate", lambda x: wsum(T.pointer_mix(p_vocab, attn, T.sigmoid(x), src, 7)), n(2, 1)),
        ("pointer_mix_attn", lambda x: wsum(T.pointer_mix(p_vocab, T.softmax(x), T.Tensor([[0.3], [0.6]]), src, 7)),
         n(2, 3)),
        ("pointer_mix_vocab", lambda x: wsum(T.pointer_mix(T.softmax(x), attn, T.Tensor([[0.3], [0.6]]), src, 7)),
         n(2, 5)),
    ]


def tiny_model(family, vocab_size, seed):
    if family in ("seq2seq", "ptrnet", "ptrnet_cov"):
        return recurrent.RecurrentSummarizer(vocab_size, pointer=family != "seq2seq", config=TINY_RECURRENT,
                                             seed=seed, coverage=family == "ptrnet_cov")
    model = TransformerSummarizer(vocab_size, TINY_LAYERS, family=family, seed=seed)
    if family == "ebertsum":
        pre = PretrainModel(vocab_size, TINY_LAYERS, seed=seed + 100)
        model.load_encoder({k: v.data for k, v in pre.params.items()})
    return model


def randomize(model, seed, scale=0.5):
    """Redraw every parameter from N(0, scale^2) so no gradient is vanishingly small by accident."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data[...] = rng.normal(0.0, scale, p.shape)
    return model


def model_grad_error(model, batch, seed, per_tensor=4, eps=1e-5):
    """Worst per-tensor vector relative error over sampled entries of every parameter.

    Tensors whose analytic and numeric gradients both have norm below 1e-8
    (key biases, which softmax ignores) count as exact.
    Returns (error, parameter name).
    """
    rng = np.random.default_rng(seed)
    worst = (0.0, "")
    for name, p in model.params.items():
        _, a, n = T.gradient_pairs(lambda _: model.loss(batch), p, eps=eps, components=per_tensor, rng=rng)
        err = T.vector_relative_error(a, n, floor=1e-8)
        worst = max(worst, (err, name))
    return worst
