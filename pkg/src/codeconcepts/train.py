"""Vocabulary, batching, the training loop and checkpoint files."""

from __future__ import annotations

import base64
import hashlib
import json
from collections import Counter
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .codemodel import segment
from .concepts import ConceptSet, concept_set
from .dataset import DatasetRecord
from .errors import DataError, DomainError, NonFiniteLoss, SchemaMismatch, ShapeMismatch
from .metrics import concept_scores, prf, confusion
from .model import BatchTensors, ModelShape, check_params, forward, init_params, loss_and_grads, losses

PAD, UNK = "<pad>", "<unk>"
CHECKPOINT_FORMAT = "codeconcepts-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    integration: str = "sequential"
    concat: bool = False
    encoder: str = "bag"
    d: int = 32
    layers: int = 1
    heads: int = 2
    ffn: int = 64
    max_len: int = 256
    learning_rate: float = 0.1
    task_head_lr_scale: float = 10.0
    epochs: int = 25
    warmup_epochs: int = 5
    schedule: str = "staged"
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threshold: float = 0.5
    concept_set: str = "vd-vulnerable"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ValueError("loss weights must be nonnegative with a positive sum")
        if self.learning_rate < 0 or self.task_head_lr_scale < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.schedule not in ("staged", "joint"):
            raise ValueError("schedule must be 'staged' or 'joint'")
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs and batch size must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")

    def shape(self, vocab_size: int, n_concepts: int) -> ModelShape:
        return ModelShape(
            vocab=vocab_size, d=self.d, concepts=n_concepts, encoder=self.encoder, layers=self.layers,
            heads=self.heads, ffn=self.ffn, max_len=self.max_len, integration=self.integration,
            concat=self.concat,
        )

    def warmup(self) -> int:
        """Concept-only epochs at the start of a staged schedule."""
        if self.schedule != "staged" or self.lambda1 == 0:
            return 0
        return min(self.warmup_epochs, self.epochs - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocab must start with the pad and unknown tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def ids(self, texts) -> list[int]:
        return [self._index.get(t, 1) for t in texts]


def build_vocab(records, min_count: int = 1) -> Vocab:
    counts = Counter()
    for r in records:
        for st in segment(r.source_text, r.function_id).labelable:
            counts.update(t.text for t in st.tokens)
    kept = sorted(t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK))
    return Vocab((PAD, UNK) + tuple(kept))


@dataclass(frozen=True)
class EncodedRecord:
    ids: np.ndarray
    stmt_len: np.ndarray
    labels: np.ndarray
    end_label: int
    branch: int
    function_id: str


def encode_record(rec: DatasetRecord, vocab: Vocab, n_concepts: int, max_len: int) -> EncodedRecord:
    fn = segment(rec.source_text, rec.function_id)
    stmts = fn.labelable
    if len(stmts) != len(rec.concepts):
        raise DataError(f"record {rec.record_id}: {len(rec.concepts)} concept vectors for {len(stmts)} statements")
    branch = -1
    if rec.branch_statement_id is not None:
        pos = [k for k, s in enumerate(stmts) if s.id == rec.branch_statement_id]
        if not pos:
            raise DataError(f"record {rec.record_id}: branch statement {rec.branch_statement_id} is not labelable")
        branch = pos[0]
    ids, lens = [], []
    for k, st in enumerate(stmts):
        room = max_len - len(ids)
        if room <= 0:
            break
        toks = vocab.ids(t.text for t in st.tokens)[:room]
        ids += toks
        lens.append(len(toks))
    if branch >= len(lens):
        raise DataError(f"record {rec.record_id}: branch statement falls beyond max_len")
    labels = np.array([c.bits for c in rec.concepts[: len(lens)]], dtype=np.float64).reshape(len(lens), -1)
    if labels.shape[1] != n_concepts:
        raise ShapeMismatch(f"record {rec.record_id} has {labels.shape[1]} concepts, expected {n_concepts}")
    return EncodedRecord(np.array(ids, dtype=np.int64), np.array(lens, dtype=np.int64), labels,
                         rec.end_label, branch, rec.function_id)


def encode_records(records, vocab, n_concepts, max_len) -> list[EncodedRecord]:
    return [encode_record(r, vocab, n_concepts, max_len) for r in records]


def collate(items) -> BatchTensors:
    B = len(items)
    T = max(len(it.ids) for it in items)
    ids = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    branch = np.full(B, -1, dtype=np.int64)
    offset = 0
    for b, it in enumerate(items):
        ids[b, : len(it.ids)] = it.ids
        mask[b, : len(it.ids)] = True
        if it.branch >= 0:
            branch[b] = offset + it.branch
        offset += len(it.stmt_len)
    return BatchTensors(
        ids=ids,
        mask=mask,
        stmt_len=np.concatenate([it.stmt_len for it in items]),
        fn_stmts=np.array([len(it.stmt_len) for it in items], dtype=np.int64),
        concept_labels=np.concatenate([it.labels for it in items], axis=0),
        end_labels=np.array([it.end_label for it in items], dtype=np.float64),
        branch=branch,
    )


TASK_HEAD = ("wt", "bt")


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps, lr_scale=None):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.lr_scale = dict(lr_scale or {})
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            lr = self.lr * self.lr_scale.get(k, 1.0)
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class Predictions:
    q: np.ndarray
    concept_probs: np.ndarray
    concept_labels: np.ndarray
    end_labels: np.ndarray
    loss: float


def predict(params, shape, encoded, lambda1=1.0, lambda2=1.0, batch_size=256) -> Predictions:
    qs, pcs, ys, es = [], [], [], []
    loss_sum = 0.0
    for i in range(0, len(encoded), batch_size):
        batch = collate(encoded[i: i + batch_size])
        fwd = forward(params, shape, batch)
        loss_sum += losses(fwd, batch, lambda1, lambda2)[0] * len(batch.end_labels)
        qs.append(fwd.q)
        pcs.append(fwd.concept_probs)
        ys.append(batch.concept_labels)
        es.append(batch.end_labels)
    n = max(len(encoded), 1)
    cat = lambda xs, w: np.concatenate(xs) if xs else np.zeros((0, w))  # noqa: E731
    return Predictions(
        np.concatenate(qs) if qs else np.zeros(0),
        cat(pcs, shape.concepts),
        cat(ys, shape.concepts),
        np.concatenate(es) if es else np.zeros(0),
        loss_sum / n,
    )


def _epoch_metrics(epoch, split, pred: Predictions, threshold, loss):
    task = prf(confusion((pred.q >= threshold).astype(int), pred.end_labels.astype(int)))[2]
    cf1 = concept_scores((pred.concept_probs >= 0.5).astype(int), pred.concept_labels.astype(int))[0]
    return {"epoch": epoch, "split": split, "f1": task, "concept_f1": cf1, "loss": loss}


@dataclass
class TrainResult:
    params: dict
    shape: ModelShape
    vocab: Vocab
    metrics: list
    best_epoch: int
    config: TrainConfig
    concept_set: ConceptSet
    trained_function_ids: tuple[str, ...]


def _clone(params):
    return {k: v.copy() for k, v in params.items()}


def train(config: TrainConfig, train_records, val_records, cset: ConceptSet | None = None,
          vocab: Vocab | None = None) -> TrainResult:
    """Mini-batch Adam; returns the parameters of the epoch with the best validation task F1."""
    train_records = list(train_records)
    val_records = list(val_records)
    if not train_records:
        raise DataError("training split is empty")
    cset = cset or concept_set(config.concept_set)
    vocab = vocab or build_vocab(train_records)
    shape = config.shape(len(vocab), cset.N)
    enc_train = encode_records(train_records, vocab, cset.N, config.max_len)
    enc_val = encode_records(val_records, vocab, cset.N, config.max_len)
    params = init_params(shape, config.seed)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps,
               {k: config.task_head_lr_scale for k in TASK_HEAD})
    order_rng = np.random.default_rng([config.seed, 1])
    warmup = config.warmup()
    metrics = []
    best, best_f1, best_epoch = _clone(params), -1.0, 0
    for epoch in range(config.epochs):
        lam2 = 0.0 if epoch < warmup else config.lambda2
        perm = order_rng.permutation(len(enc_train))
        qs, pcs, ys, es, loss_sum = [], [], [], [], 0.0
        for b, start in enumerate(range(0, len(perm), config.batch_size)):
            batch = collate([enc_train[i] for i in perm[start: start + config.batch_size]])
            try:
                loss, grads, fwd = loss_and_grads(params, shape, batch, config.lambda1, lam2)
            except DomainError:  # NaN probabilities: the parameters have already diverged
                loss = float("nan")
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            opt.step(params, grads)
            loss_sum += loss * len(batch.end_labels)
            qs.append(fwd.q)
            pcs.append(fwd.concept_probs)
            ys.append(batch.concept_labels)
            es.append(batch.end_labels)
        running = Predictions(np.concatenate(qs), np.concatenate(pcs), np.concatenate(ys), np.concatenate(es), 0.0)
        metrics.append(_epoch_metrics(epoch, "train", running, config.threshold, loss_sum / len(enc_train)))
        if enc_val:
            val = predict(params, shape, enc_val, config.lambda1, lam2)
            metrics.append(_epoch_metrics(epoch, "val", val, config.threshold, val.loss))
            score = metrics[-1]["f1"]
        else:
            score = metrics[-1]["f1"]
        if epoch >= warmup and score > best_f1:
            best, best_f1, best_epoch = _clone(params), score, epoch
    return TrainResult(best, shape, vocab, metrics, best_epoch, config, cset,
                       tuple(sorted({r.function_id for r in train_records + val_records})))


def write_metrics(path, metrics) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in metrics:
            fh.write(json.dumps(m, sort_keys=True) + "\n")


# ---------------------------------------------------------------- checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def save_checkpoint(path, result: TrainResult) -> str:
    """Write a deterministic JSON checkpoint; returns its sha256."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": result.config.to_dict(),
        "shape": asdict(result.shape),
        "concept_set": result.concept_set.to_header(),
        "vocab": list(result.vocab.tokens),
        "best_epoch": result.best_epoch,
        "trained_function_ids": list(result.trained_function_ids),
        "params": {k: _encode_array(v) for k, v in sorted(result.params.items())},
    }
    data = (json.dumps(doc, sort_keys=True) + "\n").encode("utf-8")
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> TrainResult:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: not a checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise SchemaMismatch(f"{path}: not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    cs = doc["concept_set"]
    cset = ConceptSet(cs["name"], tuple(cs["concepts"]), cs["version"])
    shape = ModelShape(**doc["shape"])
    params = {k: _decode_array(v) for k, v in doc["params"].items()}
    check_params(params, shape)
    return TrainResult(params, shape, Vocab(tuple(doc["vocab"])), [], doc["best_epoch"],
                       TrainConfig.from_dict(doc["config"]), cset, tuple(doc["trained_function_ids"]))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
