import json

import numpy as np
import pytest

from codeconcepts.dataset import split
from codeconcepts.errors import DataError, NonFiniteLoss, SchemaMismatch, ShapeMismatch
from codeconcepts.experiment import evaluate
from codeconcepts.model import init_params
from codeconcepts.synth import synthesize_corpus
from codeconcepts.train import (
    Adam, TrainConfig, Vocab, build_vocab, collate, encode_record, encode_records, file_sha256, load_checkpoint,
    save_checkpoint, train, write_metrics,
)
from helpers import vd_records

SMALL = dict(d=8, epochs=3, warmup_epochs=1, batch_size=8)


def parts(corpus):
    return [r for r in corpus if r.split == "train"], [r for r in corpus if r.split == "val"]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda1=0.0, lambda2=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda1=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(schedule="cyclic")
    assert TrainConfig(lambda1=0.0).warmup() == 0
    assert TrainConfig(schedule="joint").warmup() == 0
    assert TrainConfig(epochs=3, warmup_epochs=5).warmup() == 2
    cfg = TrainConfig(lambda1=3.0)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"nope": 1})


def test_vocab_and_encoding():
    recs = vd_records()
    vocab = build_vocab(recs)
    assert vocab.tokens[:2] == ("<pad>", "<unk>")
    assert vocab.ids(["p", "never-seen"])[1] == 1
    enc = encode_record(recs[0], vocab, 7, 256)
    assert enc.stmt_len.sum() == len(enc.ids) and len(enc.stmt_len) == len(recs[0].concepts)
    short = encode_record(recs[0], vocab, 7, 5)
    assert len(short.ids) == 5 and short.labels.shape[0] == len(short.stmt_len)
    with pytest.raises(ShapeMismatch):
        encode_record(recs[0], vocab, 3, 256)
    with pytest.raises(ValueError):
        Vocab(("a", "b"))


def test_encoding_rejects_misaligned_records():
    rec = vd_records()[0]
    from dataclasses import replace
    with pytest.raises(DataError):
        encode_record(replace(rec, concepts=rec.concepts[:-1]), build_vocab([rec]), 7, 64)


def test_collate_branch_offsets():
    recs = vd_records()
    enc = encode_records(recs, build_vocab(recs), 7, 64)
    from dataclasses import replace
    enc = [replace(e, branch=1) for e in enc]
    batch = collate(enc)
    assert batch.branch.tolist() == [1, 1 + len(enc[0].stmt_len), 1 + len(enc[0].stmt_len) + len(enc[1].stmt_len)]


def test_adam_matches_hand_computation():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.1])}
    opt = Adam(p, 0.1, 0.9, 0.999, 1e-8)
    opt.step(p, g)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) up to eps
    np.testing.assert_allclose(p["w"], [1.0 - 0.1, -2.0 - 0.1], atol=1e-7)


def test_learning_rate_zero_keeps_params(corpus):
    tr, va = parts(corpus)
    cfg = TrainConfig(learning_rate=0.0, **SMALL)
    res = train(cfg, tr, va)
    init = init_params(res.shape, cfg.seed)
    for k in init:
        np.testing.assert_array_equal(res.params[k], init[k])


def test_training_is_deterministic(corpus, tmp_path):
    tr, va = parts(corpus)
    cfg = TrainConfig(**SMALL)
    a, b = train(cfg, tr, va), train(cfg, tr, va)
    assert a.metrics == b.metrics
    assert save_checkpoint(tmp_path / "a.json", a) == save_checkpoint(tmp_path / "b.json", b)


def test_metric_log_schema(corpus, tmp_path):
    tr, va = parts(corpus)
    res = train(TrainConfig(**SMALL), tr, va)
    write_metrics(tmp_path / "m.jsonl", res.metrics)
    rows = [json.loads(line) for line in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert {tuple(sorted(r)) for r in rows} == {("concept_f1", "epoch", "f1", "loss", "split")}
    assert [(r["epoch"], r["split"]) for r in rows] == [(e, s) for e in range(3) for s in ("train", "val")]
    assert res.best_epoch >= TrainConfig(**SMALL).warmup()


def _task_only_trainer(params, batches_per_epoch, cfg):
    """Independent SFT trainer: bag encoder, parallel head, BCE on the task only, Adam."""
    p = {k: params[k].copy() for k in ("E", "W", "wt", "bt")}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    scale = {"wt": cfg.task_head_lr_scale, "bt": cfg.task_head_lr_scale}
    t, losses = 0, []
    for batches in batches_per_epoch:
        total, count = 0.0, 0
        for batch in batches:
            B = len(batch.end_labels)
            X = np.tanh(p["E"][batch.ids] @ p["W"])  # (B, T, d)
            Mk = batch.mask[..., None]
            rep = (X * Mk).sum(1) / Mk.sum(1)
            z = np.clip(rep @ p["wt"] + p["bt"][0], -30, 30)
            q = 1 / (1 + np.exp(-z))
            y = batch.end_labels
            loss = -np.mean(y * np.log(q) + (1 - y) * np.log(1 - q))
            dz = (q - y) / B
            g = {"wt": rep.T @ dz, "bt": np.array([dz.sum()])}
            drep = np.outer(dz, p["wt"])
            dX = drep[:, None, :] / Mk.sum(1)[:, None, :] * Mk
            dA = dX * (1 - X**2)
            A_in = p["E"][batch.ids]
            g["W"] = np.einsum("btd,bte->de", A_in, dA)
            gE = np.zeros_like(p["E"])
            np.add.at(gE, batch.ids, dA @ p["W"].T)
            g["E"] = gE
            t += 1
            for k in sorted(p):
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k]
                v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g[k] ** 2
                mh, vh = m[k] / (1 - cfg.beta1**t), v[k] / (1 - cfg.beta2**t)
                p[k] -= cfg.learning_rate * scale.get(k, 1.0) * mh / (np.sqrt(vh) + cfg.eps)
            total += loss * B
            count += B
        losses.append(total / count)
    return losses


def test_lambda1_zero_parallel_matches_task_only_trainer(corpus):
    tr, va = parts(corpus)
    tr = tr[:64]
    cfg = TrainConfig(lambda1=0.0, integration="parallel", d=8, epochs=3, batch_size=16)
    res = train(cfg, tr, va)
    vocab = res.vocab
    enc = encode_records(tr, vocab, 7, cfg.max_len)
    rng = np.random.default_rng([cfg.seed, 1])
    epochs = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(enc))
        epochs.append([collate([enc[i] for i in perm[s: s + cfg.batch_size]]) for s in range(0, len(perm), cfg.batch_size)])
    expected = _task_only_trainer(init_params(res.shape, cfg.seed), epochs, cfg)
    got = [m["loss"] for m in res.metrics if m["split"] == "train"]
    np.testing.assert_allclose(got, expected, rtol=1e-9)


def test_nonfinite_loss_reports_position(corpus):
    tr, va = parts(corpus)
    with pytest.raises(NonFiniteLoss) as err:
        with np.errstate(all="ignore"):
            train(TrainConfig(learning_rate=float("inf"), **SMALL), tr, va)
    assert err.value.epoch == 0 and err.value.batch == 1


def test_empty_train_split():
    with pytest.raises(DataError):
        train(TrainConfig(**SMALL), [], [])


def test_checkpoint_roundtrip(corpus, tmp_path):
    tr, va = parts(corpus)
    res = train(TrainConfig(**SMALL), tr, va)
    path = tmp_path / "c.json"
    digest = save_checkpoint(path, res)
    assert digest == file_sha256(path)
    back = load_checkpoint(path)
    assert back.config == res.config and back.shape == res.shape and back.vocab == res.vocab
    for k in res.params:
        np.testing.assert_array_equal(back.params[k], res.params[k])
    assert evaluate(back, va).to_json() == evaluate(res, va).to_json()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(SchemaMismatch):
        load_checkpoint(tmp_path / "bad.json")


def test_reaches_high_train_f1_within_ten_epochs():
    recs = split(synthesize_corpus(2000, 0.1, 0), (0.8, 0.1, 0.1), 0)
    tr, va = parts(recs)
    res = train(TrainConfig(lambda1=10.0, epochs=10), tr, va)
    assert evaluate(res, tr).task_f1 >= 0.95
