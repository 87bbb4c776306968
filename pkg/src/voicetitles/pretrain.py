"""Masked-LM and next-sentence pretraining of the transformer encoder."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .trainer import AdamState, TrainingDiverged, adam_step
from .transformer import LayerConfig, TransformerEncoder
from .vocab import PAD

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 16
    eval_every: int = 200
    heldout_fraction: float = 0.05
    seed: int = 0
    layers: LayerConfig = field(default_factory=LayerConfig)


@dataclass
class PretrainReport:
    rows: list = field(default_factory=list)   # (step, mlm_acc, nsp_acc, loss)

    def add(self, step, mlm_acc, nsp_acc, loss):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError("report steps must increase")
        self.rows.append((step, mlm_acc, nsp_acc, loss))

    def lines(self):
        return ["step,mlm_acc,nsp_acc,loss"] + [f"{s},{m:.6f},{n:.6f},{l:.6f}" for s, m, n, l in self.rows]


def mlm_loss(states, flat_positions, gold, project):
    """Mean NLL of ``gold`` ids at ``flat_positions`` of the (B*T, H) flattened states.

    Returns (loss tensor, boolean correctness per position).
    """
    if len(flat_positions) == 0:
        raise ValueError("mlm_loss needs at least one masked position")
    b, t, h = states.shape
    rows = T.take_rows(T.reshape(states, (b * t, h)), np.asarray(flat_positions))
    logp = T.log_softmax(project(rows))
    gold = np.asarray(gold)
    loss = T.scale(T.total(T.pick(logp, gold)), -1.0 / len(gold))
    return loss, logp.data.argmax(axis=-1) == gold


def nsp_loss(states, is_next, classify):
    """Binary cross-entropy of ``is_next`` from a logit over each [CLS] state."""
    b, t, h = states.shape
    cls = T.reshape(T.take_rows(T.reshape(states, (b * t, h)), np.arange(b) * t), (b, h))
    logit = T.reshape(classify(cls), (b,))
    labels = np.asarray(is_next, dtype=np.float64)
    sign = T.Tensor(2.0 * labels - 1.0)
    # -log sigmoid(+z) for positives, -log sigmoid(-z) for negatives
    loss = T.scale(T.total(T.log(T.sigmoid(T.mul(logit, sign)))), -1.0 / b)
    return loss, (logit.data > 0) == (labels > 0.5)


class PretrainModel:
    def __init__(self, vocab_size, config: LayerConfig, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.config = config
        self.encoder = TransformerEncoder(vocab_size, config, rng, prefix="encoder")
        H = config.hidden
        self.params = dict(self.encoder.params)
        self.params.update({
            "mlm.W": T.normal_param(rng, (H, H), H),
            "mlm.b": T.constant_param((H,), 0.0),
            "mlm.ln.g": T.constant_param((H,), 1.0),
            "mlm.ln.b": T.constant_param((H,), 0.0),
            "mlm.out.W": T.normal_param(rng, (H, vocab_size), H),
            "mlm.out.b": T.constant_param((vocab_size,), 0.0),
            "nsp.W": T.normal_param(rng, (H, 1), H),
            "nsp.b": T.constant_param((1,), 0.0),
        })
        for name, t in self.params.items():
            t.name = name

    def load(self, arrays):
        for k, arr in arrays.items():
            self.params[k].data[...] = arr

    def project(self, rows):
        P = self.params
        h = T.layer_norm(T.gelu(T.linear(rows, P["mlm.W"], P["mlm.b"])), P["mlm.ln.g"], P["mlm.ln.b"])
        return T.linear(h, P["mlm.out.W"], P["mlm.out.b"])

    def classify(self, cls):
        return T.linear(cls, self.params["nsp.W"], self.params["nsp.b"])

    def losses(self, instances):
        width = max(len(x.ids) for x in instances)
        b = len(instances)
        ids = np.full((b, width), PAD, dtype=np.int64)
        segs = np.zeros((b, width), dtype=np.int64)
        mask = np.zeros((b, width))
        flat, gold = [], []
        for i, x in enumerate(instances):
            ids[i, :len(x.ids)] = x.ids
            segs[i, :len(x.segments)] = x.segments
            mask[i, :len(x.ids)] = 1.0
            flat.extend(i * width + p for p in x.masked_positions)
            gold.extend(x.masked_ids)
        states = self.encoder(ids, mask, segs)
        mlm, mlm_hits = mlm_loss(states, flat, gold, self.project)
        nsp, nsp_hits = nsp_loss(states, [x.is_next for x in instances], self.classify)
        return mlm, nsp, mlm_hits, nsp_hits

    def evaluate(self, instances, batch_size=64):
        """(MLM accuracy, NSP accuracy, mean combined loss) without recording a tape."""
        mlm_hits = nsp_hits = n_mask = 0
        loss = 0.0
        for i in range(0, len(instances), batch_size):
            chunk = instances[i:i + batch_size]
            mlm, nsp, mh, nh = self.losses(chunk)
            mlm_hits += int(mh.sum())
            nsp_hits += int(nh.sum())
            n_mask += len(mh)
            loss += (mlm.item() + nsp.item()) * len(chunk)
        return mlm_hits / n_mask, nsp_hits / len(instances), loss / len(instances)


def holdout_split(instances, fraction, seed):
    n = len(instances)
    n_held = max(1, int(round(fraction * n)))
    if n_held >= n:
        raise ValueError(f"need more than {n} instances to hold out {n_held}")
    order = np.random.default_rng(seed).permutation(n)
    held = sorted(order[:n_held])
    train = sorted(order[n_held:])
    return [instances[i] for i in train], [instances[i] for i in held]


def pretrain(instances, vocab_size, config: PretrainConfig):
    """Minimize MLM + NSP loss with flat-rate Adam; returns (model, report)."""
    if not instances:
        raise ValueError("no pretraining instances")
    model = PretrainModel(vocab_size, config.layers, seed=config.seed)
    train_set, held = holdout_split(instances, config.heldout_fraction, config.seed)
    report = PretrainReport()
    report.add(0, *model.evaluate(held))
    state = AdamState()
    rng = np.random.default_rng(config.seed + 1)
    order, cursor = rng.permutation(len(train_set)), 0
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > len(order):
            order, cursor = rng.permutation(len(train_set)), 0
        batch = [train_set[i] for i in order[cursor:cursor + config.batch_size]]
        cursor += config.batch_size
        for p in model.params.values():
            p.grad = None
        with T.Tape() as tape:
            mlm, nsp, _, _ = model.losses(batch)
            loss = T.add(mlm, nsp)
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite pretraining loss at step {step}")
        T.backward(tape, loss)
        grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
        adam_step(model.params, grads, state, config.lr)
        if step % config.eval_every == 0 or step == config.steps:
            report.add(step, *model.evaluate(held))
            log.info("pretrain step %d mlm %.3f nsp %.3f loss %.4f", *report.rows[-1])
    return model, report
