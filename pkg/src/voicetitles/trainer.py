"""Fine-tuning loop: Adam, per-group warmup schedules, checkpoint selection on validation loss."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .features import make_batch

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


def lr_at(step, base_lr, warmup):
    """Linear warmup to ``base_lr / sqrt(warmup)`` then inverse-square-root decay."""
    if step < 1:
        raise ValueError(f"learning-rate schedule starts at step 1, got {step}")
    if warmup < 1:
        raise ValueError(f"warmup must be at least 1, got {warmup}")
    return base_lr * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr):
    """Bias-corrected Adam update in place. ``lr`` is a float or a name -> float map."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        p.data -= step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


@dataclass
class TrainConfig:
    family: str = "bertsum"
    lr_e: float = 2e-3
    lr_d: float = 0.2
    warmup_e: int = 20000
    warmup_d: int = 10000
    schedule: str = "noam"        # "noam" (warmup schedule) or "flat"
    batch_size: int = 16
    total_steps: int = 2000
    checkpoint_every: int = 2000
    seed: int = 0
    clip_norm: float = 0.0        # 0 disables
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.warmup_e < 1 or self.warmup_d < 1:
            raise ValueError("warmups must be at least 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        if self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size and checkpoint_every must be positive")
        if self.schedule not in ("noam", "flat"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def group_lrs(self, step):
        if self.schedule == "flat":
            return self.lr_e, self.lr_d
        return lr_at(step, self.lr_e, self.warmup_e), lr_at(step, self.lr_d, self.warmup_d)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    best_params: dict
    best_step: int
    best_val_loss: float
    checkpoints: list          # (step, val_loss, path or None)
    log_rows: list             # (step, lr_e, lr_d, train_loss, val_loss or None)

    def log_lines(self):
        out = ["step,lr_e,lr_d,train_loss,val_loss"]
        for step, lr_e, lr_d, tl, vl in self.log_rows:
            out.append(f"{step},{lr_e:.6e},{lr_d:.6e},{tl:.6f},{'' if vl is None else f'{vl:.6f}'}")
        return out


def snapshot(model):
    return {k: v.data.copy() for k, v in model.params.items()}


def restore(model, arrays):
    for k, arr in arrays.items():
        model.params[k].data[...] = arr


def evaluate_loss(model, examples, batch_size=32):
    """Token-weighted mean loss over ``examples``; no tape is recorded."""
    total = tokens = 0.0
    for i in range(0, len(examples), batch_size):
        batch = make_batch(examples[i:i + batch_size], model.vocab_size)
        n = batch.tgt_mask.sum()
        total += model.loss(batch).item() * n
        tokens += n
    return total / tokens


def train(model, train_examples, val_examples, config: TrainConfig, checkpoint_dir=None):
    if not train_examples or not val_examples:
        raise ValueError("training and validation splits must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    groups = {name: model.group_of(name) for name in model.params}
    order = rng.permutation(len(train_examples))
    cursor = 0
    rows, checkpoints = [], []
    best = (math.inf, None, None)
    for step in range(1, config.total_steps + 1):
        if cursor + config.batch_size > len(order):
            order = rng.permutation(len(train_examples))
            cursor = 0
        idx = order[cursor:cursor + config.batch_size]
        cursor += config.batch_size
        batch = make_batch([train_examples[i] for i in idx], model.vocab_size)
        for p in model.params.values():
            p.grad = None
        with T.Tape() as tape:
            loss = model.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite training loss at step {step}")
        T.backward(tape, loss)
        grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
        if config.clip_norm:
            clip_global_norm(grads, config.clip_norm)
        lr_e, lr_d = config.group_lrs(step)
        lrs = {k: (lr_e if groups[k] == "encoder" else lr_d) for k in model.params}
        adam_step(model.params, grads, state, lrs)
        val = None
        if step % config.checkpoint_every == 0 or step == config.total_steps:
            val = evaluate_loss(model, val_examples)
            if not math.isfinite(val):
                raise TrainingDiverged(f"non-finite validation loss at step {step}")
            path = None
            if checkpoint_dir is not None:
                path = os.path.join(checkpoint_dir, f"step_{step}.ckpt")
                T.save_checkpoint(path, model.params)
            checkpoints.append((step, val, path))
            if val < best[0]:
                best = (val, step, snapshot(model))
            log.info("step %d train %.4f val %.4f", step, value, val)
        rows.append((step, lr_e, lr_d, value, val))
    restore(model, best[2])
    return TrainResult(best[2], best[1], best[0], checkpoints, rows)
