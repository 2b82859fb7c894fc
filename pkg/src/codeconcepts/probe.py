"""Linear concept probes over frozen statement representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatch, SplitLeakage
from .metrics import EvalReport, f1
from .model import encode, sigmoid
from .train import TrainResult, collate, encode_records


@dataclass(frozen=True)
class ProbeModel:
    W: np.ndarray  # (d, N)
    b: np.ndarray  # (N,)
    layer: int = -1

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeMismatch("probe weight (d, N) and bias (N,) disagree")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise DataError("probe parameters must be finite")

    def predict_proba(self, X):
        return sigmoid(np.clip(X @ self.W + self.b, -30, 30))


def check_isolation(checkpoint: TrainResult, records) -> None:
    trained = set(checkpoint.trained_function_ids)
    for r in records:
        if r.split != "probe":
            raise SplitLeakage(f"record {r.record_id} belongs to split {r.split!r}, not 'probe'")
        if r.function_id in trained:
            raise SplitLeakage(f"function {r.function_id} was seen while training the checkpoint")


def statement_features(checkpoint: TrainResult, records, layer: int = -1, batch_size: int = 256):
    """Frozen statement representations (S, d) and their concept labels (S, N)."""
    records = list(records)
    if not records:
        raise DataError("no records to probe")
    width = len(records[0].concepts[0].bits) if records[0].concepts else 0
    enc = encode_records(records, checkpoint.vocab, width, checkpoint.shape.max_len)
    shape = checkpoint.shape
    feats, labels = [], []
    for i in range(0, len(enc), batch_size):
        batch = collate(enc[i: i + batch_size])
        # the model's concept width may differ from the probe's; encode only needs the encoder
        probe_batch = _with_width(batch, shape.concepts)
        stmt, _ = encode(checkpoint.params, shape, probe_batch, layer=layer)
        feats.append(stmt)
        labels.append(batch.concept_labels)
    return np.concatenate(feats), np.concatenate(labels)


def _with_width(batch, n):
    from dataclasses import replace

    if batch.concept_labels.shape[1] == n:
        return batch
    return replace(batch, concept_labels=np.zeros((len(batch.stmt_len), n)))


def fit_logistic(X, Y, l2: float = 1e-4, lr: float = 1.0, tol: float = 1e-6, max_iter: int = 5000):
    """Independent per-column logistic regressions by full-batch gradient descent.

    Features are standardized for conditioning; the scaling is folded back
    into the returned weights, so they apply to raw features.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd
    S, d = Z.shape
    W = np.zeros((d, Y.shape[1]))
    b = np.zeros(Y.shape[1])
    prev = np.inf
    for _ in range(max_iter):
        P = sigmoid(np.clip(Z @ W + b, -30, 30))
        Pc = np.clip(P, 1e-15, 1 - 1e-15)
        loss = -np.mean(Y * np.log(Pc) + (1 - Y) * np.log(1 - Pc)) + 0.5 * l2 * np.sum(W * W)
        if prev - loss < tol and prev >= loss:
            break
        prev = loss
        G = (P - Y) / S
        W -= lr * (Z.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)
    return W / sd[:, None], b - (mu / sd) @ W


def train_probe(checkpoint: TrainResult, probe_records, seed: int = 0, layer: int = -1, l2: float = 1e-4) -> ProbeModel:
    """Fit a linear probe on frozen representations; encoder parameters are never touched."""
    probe_records = list(probe_records)
    check_isolation(checkpoint, probe_records)
    X, Y = statement_features(checkpoint, probe_records, layer)
    # seed only fixes the order of rows, which full-batch descent is invariant to up to rounding
    order = np.random.default_rng(seed).permutation(len(X))
    W, b = fit_logistic(X[order], Y[order], l2=l2)
    return ProbeModel(W, b, layer)


def evaluate_probe(probe: ProbeModel, checkpoint: TrainResult, records) -> EvalReport:
    X, Y = statement_features(checkpoint, records, probe.layer)
    if X.shape[1] != probe.W.shape[0] or Y.shape[1] != probe.W.shape[1]:
        raise ShapeMismatch("probe does not match these representations")
    pred = (probe.predict_proba(X) >= 0.5).astype(int)
    flat_p, flat_y = pred.ravel(), Y.astype(int).ravel()
    return f1(flat_p, flat_y, pred, Y.astype(int))


def fit_holdout_split(records, seed: int = 0, holdout: float = 0.2):
    """Divide probe records by function id into fit and held-out parts."""
    fids = sorted({r.function_id for r in records})
    perm = np.random.default_rng(seed).permutation(len(fids))
    n_hold = max(1, int(round(holdout * len(fids)))) if len(fids) > 1 else 0
    held = {fids[k] for k in perm[:n_hold]}
    fit = [r for r in records if r.function_id not in held]
    test = [r for r in records if r.function_id in held]
    return fit, test


def probe_f1(checkpoint: TrainResult, probe_records, seed: int = 0, layer: int = -1) -> tuple[float, EvalReport]:
    """Held-out micro concept F1 of a probe fitted on the rest of the probe split."""
    probe_records = list(probe_records)
    check_isolation(checkpoint, probe_records)
    fit, held = fit_holdout_split(probe_records, seed)
    probe = train_probe(checkpoint, fit, seed, layer)
    report = evaluate_probe(probe, checkpoint, held)
    return report.concept_f1, report
