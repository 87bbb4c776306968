import math

import numpy as np
import pytest

from voicetitles import corpus as C
from voicetitles import tensor as T
from voicetitles import vocab as V
from voicetitles.pretrain import (PretrainConfig, PretrainModel, PretrainReport, holdout_split, mlm_loss,
                                  nsp_loss, pretrain)
from voicetitles.transformer import LayerConfig

TINY = LayerConfig(hidden=16, heads=2, ffn=24, enc_layers=1, dec_layers=1, max_positions=64)


def _states(b=2, t=3, h=4, seed=0):
    return T.Tensor(np.random.default_rng(seed).normal(size=(b, t, h)))


def test_mlm_confident_projection():
    gold = np.array([2, 0, 1])

    def project(rows):
        logits = np.zeros((3, 4))
        logits[np.arange(3), gold] = 1e3
        return T.Tensor(logits)

    loss, hits = mlm_loss(_states(), [0, 2, 4], gold, project)
    assert loss.item() == 0.0 and hits.all()


def test_mlm_uniform_projection():
    loss, _ = mlm_loss(_states(), [1, 3], [0, 5], lambda rows: T.Tensor(np.zeros((2, 7))))
    assert loss.item() == pytest.approx(math.log(7), abs=1e-15)


def test_mlm_matches_hand_sum():
    rng = np.random.default_rng(1)
    states = _states(seed=2)
    W = rng.normal(size=(4, 5))
    positions, gold = [0, 4, 5], [3, 1, 4]
    loss, hits = mlm_loss(states, positions, gold, lambda rows: T.matmul(rows, T.Tensor(W)))
    flat = states.data.reshape(6, 4)
    expected = 0.0
    for p, g in zip(positions, gold):
        logits = flat[p] @ W
        expected -= logits[g] - math.log(sum(math.exp(v) for v in logits))
        assert hits[positions.index(p)] == (int(np.argmax(logits)) == g)
    assert loss.item() == pytest.approx(expected / 3, abs=1e-10)


def test_mlm_needs_positions():
    with pytest.raises(ValueError):
        mlm_loss(_states(), [], [], lambda rows: rows)


def test_nsp_half_probability():
    loss, _ = nsp_loss(_states(b=3), [True, False, True], lambda cls: T.Tensor(np.zeros((3, 1))))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-15)


def test_nsp_confident_correct():
    loss, hits = nsp_loss(_states(b=2), [True, False], lambda cls: T.Tensor(np.array([[40.0], [-40.0]])))
    assert loss.item() < 1e-15 and hits.all()


def test_nsp_batch_is_mean_of_instances():
    logits = np.array([[0.3], [-1.2], [2.0], [0.1]])
    labels = [True, False, False, True]
    batch, _ = nsp_loss(_states(b=4), labels, lambda cls: T.Tensor(logits))
    per = [nsp_loss(_states(b=1), [y], lambda cls, z=z: T.Tensor(np.array([z])))[0].item()
           for z, y in zip(logits, labels)]
    assert batch.item() == pytest.approx(sum(per) / 4, abs=1e-12)
    expected = [-math.log(1 / (1 + math.exp(-z[0] if y else z[0]))) for z, y in zip(logits, labels)]
    assert per == pytest.approx(expected, abs=1e-12)


def test_report_requires_increasing_steps():
    report = PretrainReport()
    report.add(0, 0.1, 0.5, 3.0)
    with pytest.raises(ValueError):
        report.add(0, 0.2, 0.5, 2.0)
    assert report.lines() == ["step,mlm_acc,nsp_acc,loss", "0,0.100000,0.500000,3.000000"]


def test_holdout_split_is_partition():
    train, held = holdout_split(list(range(100)), 0.05, seed=3)
    assert len(held) == 5 and sorted(train + held) == list(range(100))


@pytest.fixture(scope="module")
def instances():
    _, descriptions = C.generate_synthetic(10, seed=0, n_descriptions=120)
    voc = V.build_vocab(descriptions)
    return C.make_pretrain_instances(descriptions, voc, seed=0), len(voc)


def test_zero_steps_keeps_initialization(instances):
    data, n_vocab = instances
    model, report = pretrain(data, n_vocab, PretrainConfig(steps=0, layers=TINY, seed=4))
    fresh = PretrainModel(n_vocab, TINY, seed=4)
    assert all(np.array_equal(model.params[k].data, fresh.params[k].data) for k in fresh.params)
    assert [r[0] for r in report.rows] == [0]


def test_deterministic_and_learning(instances, tmp_path):
    data, n_vocab = instances
    cfg = PretrainConfig(steps=60, lr=3e-3, batch_size=8, eval_every=30, layers=TINY, seed=1)
    model, report = pretrain(data, n_vocab, cfg)
    _, again = pretrain(data, n_vocab, cfg)
    assert report.rows == again.rows
    assert [r[0] for r in report.rows] == [0, 30, 60]
    assert report.rows[-1][3] < report.rows[0][3]
    for _, mlm, nsp, _ in report.rows:
        assert 0 <= mlm <= 1 and 0 <= nsp <= 1

    _, held = holdout_split(data, cfg.heldout_fraction, cfg.seed)
    path = tmp_path / "pre.ckpt"
    T.save_checkpoint(path, model.params)
    restored = PretrainModel(n_vocab, TINY, seed=99)
    restored.load(T.load_checkpoint(path))
    assert restored.evaluate(held) == model.evaluate(held)


def test_pretrain_rejects_empty():
    with pytest.raises(ValueError):
        pretrain([], 10, PretrainConfig(layers=TINY))
