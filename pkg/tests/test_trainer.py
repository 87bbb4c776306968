import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voicetitles import corpus as C
from voicetitles import tensor as T
from voicetitles import vocab as V
from voicetitles.features import make_example
from voicetitles.recurrent import RecurrentConfig, RecurrentSummarizer
from voicetitles.trainer import (AdamState, TrainConfig, TrainingDiverged, adam_step, clip_global_norm,
                                 evaluate_loss, lr_at, train)
from voicetitles.transformer import LayerConfig, TransformerSummarizer


def test_lr_knee_branches_meet():
    for warmup in (1, 7, 2000, 20000):
        assert lr_at(warmup, 0.5, warmup) == pytest.approx(0.5 * warmup ** -0.5, rel=1e-15)


def test_lr_published_value():
    assert lr_at(20000, 2e-3, 20000) == pytest.approx(1.41421356237e-5, rel=1e-11)


def test_lr_first_step_is_ramp():
    assert lr_at(1, 0.2, 10000) == 0.2 * 10000 ** -1.5


def test_lr_rejects_step_zero():
    with pytest.raises(ValueError):
        lr_at(0, 1.0, 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5000), st.integers(1, 20000))
def test_lr_monotone_around_warmup(warmup, step):
    a, b = lr_at(step, 1.0, warmup), lr_at(step + 1, 1.0, warmup)
    if step + 1 <= warmup:
        assert b > a
    elif step >= warmup:
        assert b < a


def test_encoder_schedule_ignores_decoder_warmup():
    a = TrainConfig(lr_e=2e-4, warmup_e=2000, lr_d=0.1, warmup_d=10000)
    b = TrainConfig(lr_e=2e-4, warmup_e=2000, lr_d=0.1, warmup_d=300)
    for step in (1, 500, 2000, 9000, 35000):
        assert a.group_lrs(step)[0] == b.group_lrs(step)[0]


def _scalar(value):
    return {"w": T.Tensor(np.array([value]), requires_grad=True)}


def test_adam_zero_grads():
    params, state = _scalar(3.0), AdamState()
    adam_step(params, {"w": np.zeros(1)}, state, 0.1)
    assert params["w"].data[0] == 3.0 and state.step == 1


def test_adam_first_step_moves_by_lr():
    params, state = _scalar(3.0), AdamState()
    adam_step(params, {"w": np.array([0.7])}, state, 0.01)
    assert params["w"].data[0] == pytest.approx(3.0 - 0.01, abs=1e-9)


def test_adam_hand_trace_on_quadratic():
    # f(w) = (w - 2)^2, three steps written out longhand
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 5.0, 0.0, 0.0
    expected = []
    for t in (1, 2, 3):
        g = 2.0 * (w - 2.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        expected.append(w)
    params, state = _scalar(5.0), AdamState()
    got = []
    for _ in range(3):
        g = 2.0 * (params["w"].data - 2.0)
        adam_step(params, {"w": g}, state, lr)
        got.append(float(params["w"].data[0]))
    assert got == pytest.approx(expected, abs=1e-12)


def test_adam_names_non_finite_parameter():
    params = {"enc.W": T.Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(TrainingDiverged, match="enc.W"):
        adam_step(params, {"enc.W": np.array([np.nan, 0.0])}, AdamState(), 0.1)


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(grads, 1.0) == 5.0
    assert math.hypot(grads["a"][0], grads["b"][0]) == pytest.approx(1.0)


@pytest.mark.parametrize("kwargs", [dict(warmup_e=0), dict(total_steps=0), dict(schedule="cosine")])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


@pytest.fixture(scope="module")
def toy():
    pairs, _ = C.generate_synthetic(60, seed=0)
    voc = V.build_vocab([p.web_title for p in pairs] + [p.voice_title for p in pairs])
    ex = [make_example(p.web_title, p.voice_title, voc) for p in pairs]
    return voc, ex[:50], ex[50:]


def _small(voc):
    return TransformerSummarizer(len(voc), LayerConfig(hidden=16, heads=2, ffn=24, enc_layers=1, dec_layers=1,
                                                        max_positions=64), seed=0)


def test_single_final_checkpoint(toy, tmp_path):
    voc, tr, va = toy
    cfg = TrainConfig(total_steps=3, checkpoint_every=10, batch_size=4, lr_e=0.1, lr_d=0.1, warmup_e=5,
                      warmup_d=5)
    result = train(_small(voc), tr, va, cfg, checkpoint_dir=str(tmp_path))
    assert [c[0] for c in result.checkpoints] == [3]
    assert result.best_step == 3
    assert (tmp_path / "step_3.ckpt").exists()


def test_deterministic_and_best_selected(toy):
    voc, tr, va = toy
    cfg = TrainConfig(total_steps=12, checkpoint_every=4, batch_size=4, lr_e=0.2, lr_d=0.2, warmup_e=4,
                      warmup_d=4, seed=3)
    first = train(_small(voc), tr, va, cfg)
    second = train(_small(voc), tr, va, cfg)
    assert [c[1] for c in first.checkpoints] == [c[1] for c in second.checkpoints]
    assert first.best_val_loss == min(c[1] for c in first.checkpoints)
    model = _small(voc)
    for k, arr in first.best_params.items():
        model.params[k].data[...] = arr
    assert evaluate_loss(model, va) == first.best_val_loss
    lines = first.log_lines()
    assert lines[0] == "step,lr_e,lr_d,train_loss,val_loss" and len(lines) == 13
    assert lines[4].count(",") == 4 and lines[1].endswith(",")


def test_encoder_group_uses_encoder_rate(toy):
    voc, tr, va = toy
    model = _small(voc)
    before = {k: p.data.copy() for k, p in model.params.items()}
    cfg = TrainConfig(total_steps=1, batch_size=4, lr_e=0.0, lr_d=0.1, warmup_e=1, warmup_d=1)
    train(model, tr, va, cfg)
    moved = {k for k, p in model.params.items() if not np.array_equal(p.data, before[k])}
    assert moved and all(model.group_of(k) == "decoder" for k in moved)


def test_recurrent_flat_schedule(toy):
    voc, tr, va = toy
    model = RecurrentSummarizer(len(voc), True, RecurrentConfig(emb=8, hidden=8, attn=8))
    cfg = TrainConfig(family="ptrnet", schedule="flat", lr_e=1e-3, lr_d=1e-3, total_steps=2, batch_size=4,
                      clip_norm=2.0)
    result = train(model, tr, va, cfg)
    assert {(r[1], r[2]) for r in result.log_rows} == {(1e-3, 1e-3)}


def test_train_requires_data(toy):
    voc, tr, _ = toy
    with pytest.raises(ValueError):
        train(_small(voc), tr, [], TrainConfig(total_steps=1))


def test_train_aborts_on_non_finite_loss(toy):
    voc, tr, va = toy
    model = _small(voc)
    model.params["bertsum.decoder.out.b"].data[:] = np.nan
    with pytest.raises(TrainingDiverged, match="step 1"):
        train(model, tr, va, TrainConfig(total_steps=2, batch_size=4))
