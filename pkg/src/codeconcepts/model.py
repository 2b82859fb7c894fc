"""Shared encoder with a statement-level concept head and a task head.

Everything is plain numpy in float64 with a hand-written backward pass.

Shapes: B functions per batch, T padded length, S statements in the batch,
M unpadded tokens, d model width, N concepts. Tokens of one function are
contiguous in the flattened ``H[mask]`` order, and so are the tokens of each
statement, which lets pooling use ``np.add.reduceat``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatch

LOGIT_CLAMP = 30.0
ENCODERS = ("bag", "attention")
INTEGRATIONS = ("sequential", "parallel")


@dataclass(frozen=True)
class ModelShape:
    vocab: int
    d: int
    concepts: int
    encoder: str = "bag"
    layers: int = 1
    heads: int = 2
    ffn: int = 64
    max_len: int = 256
    integration: str = "sequential"
    concat: bool = True

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.integration not in INTEGRATIONS:
            raise ValueError(f"integration must be one of {INTEGRATIONS}")
        if self.encoder == "attention" and self.d % self.heads:
            raise ValueError("d must be divisible by heads")
        if min(self.vocab, self.d, self.concepts, self.layers, self.heads, self.ffn, self.max_len) < 1:
            raise ValueError("model sizes must be positive")

    @property
    def task_input(self) -> int:
        if self.integration == "parallel":
            return self.d
        return self.concepts + (self.d if self.concat else 0)


@dataclass
class BatchTensors:
    ids: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) bool
    stmt_len: np.ndarray  # (S,) tokens per statement
    fn_stmts: np.ndarray  # (B,) statements per function
    concept_labels: np.ndarray  # (S, N)
    end_labels: np.ndarray  # (B,)
    branch: np.ndarray  # (B,) statement index into S, -1 when absent

    def __post_init__(self):
        B, T = self.ids.shape
        if self.mask.shape != (B, T):
            raise ShapeMismatch("mask must match ids")
        S = len(self.stmt_len)
        if self.concept_labels.ndim != 2 or len(self.concept_labels) != S:
            raise ShapeMismatch("one concept-label row per statement")
        if len(self.fn_stmts) != B or len(self.end_labels) != B or len(self.branch) != B:
            raise ShapeMismatch("per-function arrays must have length B")
        if int(self.fn_stmts.sum()) != S or (self.fn_stmts < 1).any() or (self.stmt_len < 1).any():
            raise ShapeMismatch("statement segments do not partition the batch")
        per_fn = np.add.reduceat(self.stmt_len, self.stmt_starts_in_fn) if S else np.zeros(0)
        if not np.array_equal(per_fn, self.mask.sum(axis=1)):
            raise ShapeMismatch("statement lengths do not cover unpadded positions")
        # every function's tokens must be a prefix of its row
        if not np.array_equal(self.mask, np.arange(T)[None, :] < self.mask.sum(axis=1)[:, None]):
            raise ShapeMismatch("padding must follow tokens")

    @property
    def stmt_starts_in_fn(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.fn_stmts)[:-1]]).astype(np.int64)

    @property
    def stmt_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.stmt_len)[:-1]]).astype(np.int64)

    @property
    def fn_len(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def fn_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.fn_len)[:-1]]).astype(np.int64)

    @property
    def uses_branch(self) -> bool:
        return bool(len(self.branch)) and bool((self.branch >= 0).all())


def init_params(shape: ModelShape, seed: int) -> dict[str, np.ndarray]:
    """Gaussian init; each tensor draws from its own stream keyed by (seed, name).

    Separate streams keep the encoder initialization identical across models
    that differ only in head widths, e.g. when varying the number of concepts.
    """
    d, N = shape.d, shape.concepts

    def normal(name, *dims, scale):
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        return rng.normal(0.0, scale, size=dims)

    p = {"E": normal("E", shape.vocab, d, scale=0.5)}
    if shape.encoder == "bag":
        p["W"] = normal("W", d, d, scale=1 / np.sqrt(d))
    else:
        p["P"] = normal("P", shape.max_len, d, scale=0.1)
        for l in range(shape.layers):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                p[f"L{l}.{name}"] = normal(f"L{l}.{name}", d, d, scale=1 / np.sqrt(d))
            p[f"L{l}.W1"] = normal(f"L{l}.W1", d, shape.ffn, scale=1 / np.sqrt(d))
            p[f"L{l}.b1"] = np.zeros(shape.ffn)
            p[f"L{l}.W2"] = normal(f"L{l}.W2", shape.ffn, d, scale=1 / np.sqrt(shape.ffn))
            p[f"L{l}.b2"] = np.zeros(d)
    p["Wc"] = normal("Wc", d, N, scale=1 / np.sqrt(d))
    p["bc"] = np.zeros(N)
    p["wt"] = normal("wt", shape.task_input, scale=1 / np.sqrt(shape.task_input))
    p["bt"] = np.zeros(1)
    return p


def check_params(params, shape: ModelShape) -> None:
    expected = init_params(shape, 0)
    if set(params) != set(expected):
        raise ShapeMismatch(f"parameter names {sorted(params)} do not match the model shape")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise ShapeMismatch(f"{k}: shape {params[k].shape}, expected {v.shape}")
        if not np.isfinite(params[k]).all():
            raise DomainError(f"{k} has non-finite entries")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------- losses


def _check_open_unit(p, name):
    p = np.asarray(p, dtype=np.float64)
    if not ((p > 0) & (p < 1)).all():
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return p


def concept_loss(p, y) -> float:
    """Mean over statements of the per-statement mean BCE across N concepts."""
    p = _check_open_unit(p, "concept probabilities")
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ShapeMismatch(f"concept probabilities {p.shape} vs labels {y.shape}")
    if p.size == 0:
        return 0.0
    per_statement = -np.mean(y * np.log(p) + (1 - y) * np.log1p(-p), axis=1)
    return float(np.mean(per_statement))


def task_loss(q, y) -> float:
    """Binary cross entropy, averaged when given arrays."""
    q = _check_open_unit(q, "task prediction")
    y = np.asarray(y, dtype=np.float64)
    if q.shape != y.shape:
        raise ShapeMismatch(f"prediction {q.shape} vs label {y.shape}")
    return float(np.mean(-(y * np.log(q) + (1 - y) * np.log1p(-q))))


def total_loss(lambda1: float, lambda2: float, l_concept: float, l_task: float) -> float:
    return lambda1 * l_concept + lambda2 * l_task


# ---------------------------------------------------------------- encoder


def _bag_forward(params, ids):
    X = params["E"][ids]
    H = np.tanh(X @ params["W"])
    return [X, H], (X, H)


def _bag_backward(params, ids, cache, dH, grads):
    X, H = cache
    dZ = dH * (1 - H * H)
    grads["W"] += np.einsum("btd,bte->de", X, dZ)
    np.add.at(grads["E"], ids, dZ @ params["W"].T)


def _split_heads(x, h):
    B, T, d = x.shape
    return x.reshape(B, T, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def _block_forward(params, l, X, key_bias, h):
    g = lambda n: params[f"L{l}.{n}"]  # noqa: E731
    dh = X.shape[-1] // h
    Q, K, V = (_split_heads(X @ g(n), h) for n in ("Wq", "Wk", "Wv"))
    scores = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dh) + key_bias
    scores = scores - scores.max(axis=-1, keepdims=True)
    A = np.exp(scores)
    A /= A.sum(axis=-1, keepdims=True)
    O = _merge_heads(A @ V)
    X1 = X + O @ g("Wo")
    F = np.tanh(X1 @ g("W1") + g("b1"))
    X2 = X1 + F @ g("W2") + g("b2")
    return X2, (X, Q, K, V, A, O, X1, F)


def _block_backward(params, l, cache, dX2, grads, h):
    g = lambda n: params[f"L{l}.{n}"]  # noqa: E731
    X, Q, K, V, A, O, X1, F = cache
    dh = X.shape[-1] // h
    grads[f"L{l}.b2"] += dX2.sum(axis=(0, 1))
    grads[f"L{l}.W2"] += np.einsum("btf,btd->fd", F, dX2)
    dpre = (dX2 @ g("W2").T) * (1 - F * F)
    grads[f"L{l}.b1"] += dpre.sum(axis=(0, 1))
    grads[f"L{l}.W1"] += np.einsum("btd,btf->df", X1, dpre)
    dX1 = dX2 + dpre @ g("W1").T
    grads[f"L{l}.Wo"] += np.einsum("btd,bte->de", O, dX1)
    dO = _split_heads(dX1 @ g("Wo").T, h)
    dA = dO @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dO
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    dX = dX1.copy()
    for name, dP in (("Wq", dQ), ("Wk", dK), ("Wv", dV)):
        dP = _merge_heads(dP)
        grads[f"L{l}.{name}"] += np.einsum("btd,bte->de", X, dP)
        dX += dP @ g(name).T
    return dX


def _attention_forward(params, ids, mask, shape):
    T = ids.shape[1]
    if T > shape.max_len:
        raise ShapeMismatch(f"sequence length {T} exceeds max_len {shape.max_len}")
    X = params["E"][ids] + params["P"][:T][None]
    key_bias = np.where(mask, 0.0, -1e9)[:, None, None, :]
    layers = [X]
    caches = []
    for l in range(shape.layers):
        X, c = _block_forward(params, l, X, key_bias, shape.heads)
        layers.append(X)
        caches.append(c)
    return layers, caches


def _attention_backward(params, ids, caches, dH, grads, shape):
    dX = dH
    for l in reversed(range(shape.layers)):
        dX = _block_backward(params, l, caches[l], dX, grads, shape.heads)
    grads["P"][: ids.shape[1]] += dX.sum(axis=0)
    np.add.at(grads["E"], ids, dX)


def encoder_layers(params, shape: ModelShape, batch: BatchTensors):
    """All layer outputs (B, T, d); index 0 is the embedding layer, -1 the final one."""
    if shape.encoder == "bag":
        layers, cache = _bag_forward(params, batch.ids)
    else:
        layers, cache = _attention_forward(params, batch.ids, batch.mask, shape)
    return layers, cache


def pool(H, batch: BatchTensors):
    """Statement representations (S, d) and function representations (B, d) by mean pooling."""
    Hf = H[batch.mask]
    stmt = np.add.reduceat(Hf, batch.stmt_starts, axis=0) / batch.stmt_len[:, None]
    fn = np.add.reduceat(Hf, batch.fn_starts, axis=0) / batch.fn_len[:, None]
    return stmt, fn


def encode(params, shape: ModelShape, batch: BatchTensors, layer: int = -1):
    if batch.ids.max(initial=0) >= params["E"].shape[0] or batch.ids.min(initial=0) < 0:
        raise ShapeMismatch("token id outside the embedding table")
    if batch.concept_labels.shape[1] != shape.concepts:
        raise ShapeMismatch(f"batch has {batch.concept_labels.shape[1]} concepts, model {shape.concepts}")
    layers, _ = encoder_layers(params, shape, batch)
    return pool(layers[layer], batch)


# ---------------------------------------------------------------- full model


@dataclass
class Forward:
    stmt: np.ndarray
    fn: np.ndarray
    concept_logits: np.ndarray
    concept_probs: np.ndarray
    task_input: np.ndarray
    task_logits: np.ndarray
    q: np.ndarray
    H: np.ndarray
    cache: object


def _context(fwd_stmt, fwd_fn, batch):
    return fwd_stmt[batch.branch] if batch.uses_branch else fwd_fn


def forward(params, shape: ModelShape, batch: BatchTensors) -> Forward:
    if batch.concept_labels.shape[1] != shape.concepts:
        raise ShapeMismatch(f"batch has {batch.concept_labels.shape[1]} concepts, model {shape.concepts}")
    layers, cache = encoder_layers(params, shape, batch)
    H = layers[-1]
    stmt, fn = pool(H, batch)
    zc = np.clip(stmt @ params["Wc"] + params["bc"], -LOGIT_CLAMP, LOGIT_CLAMP)
    pc = sigmoid(zc)
    ctx = _context(stmt, fn, batch)
    if shape.integration == "parallel":
        inp = ctx
    else:
        inp = np.add.reduceat(pc, batch.stmt_starts_in_fn, axis=0) / batch.fn_stmts[:, None]
        if shape.concat:
            inp = np.concatenate([inp, ctx], axis=1)
    zt = np.clip(inp @ params["wt"] + params["bt"][0], -LOGIT_CLAMP, LOGIT_CLAMP)
    return Forward(stmt, fn, zc, pc, inp, zt, sigmoid(zt), H, cache)


def forward_task(params, shape: ModelShape, batch: BatchTensors) -> np.ndarray:
    return forward(params, shape, batch).q


def losses(fwd: Forward, batch: BatchTensors, lambda1: float, lambda2: float):
    lc = concept_loss(fwd.concept_probs, batch.concept_labels) if lambda1 else 0.0
    lt = task_loss(fwd.q, batch.end_labels.astype(np.float64)) if lambda2 else 0.0
    return total_loss(lambda1, lambda2, lc, lt), lc, lt


def backward(params, shape: ModelShape, batch: BatchTensors, fwd: Forward, lambda1: float, lambda2: float):
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    B = len(batch.end_labels)
    S, N = fwd.concept_probs.shape
    inside_t = np.abs(fwd.task_logits) < LOGIT_CLAMP
    inside_c = np.abs(fwd.concept_logits) < LOGIT_CLAMP

    dzt = lambda2 * (fwd.q - batch.end_labels) / B * inside_t
    grads["wt"] += fwd.task_input.T @ dzt
    grads["bt"][0] += dzt.sum()
    dinp = np.outer(dzt, params["wt"])

    dstmt = np.zeros_like(fwd.stmt)
    dfn = np.zeros_like(fwd.fn)
    dzc = lambda1 * (fwd.concept_probs - batch.concept_labels) / (S * N)
    if shape.integration == "parallel":
        dctx = dinp
    else:
        du = dinp[:, :N]
        dctx = dinp[:, N:] if shape.concat else None
        dpc = np.repeat(du / batch.fn_stmts[:, None], batch.fn_stmts, axis=0)
        dzc = dzc + dpc * fwd.concept_probs * (1 - fwd.concept_probs)
    dzc = dzc * inside_c
    grads["Wc"] += fwd.stmt.T @ dzc
    grads["bc"] += dzc.sum(axis=0)
    dstmt += dzc @ params["Wc"].T
    if dctx is not None:
        if batch.uses_branch:
            np.add.at(dstmt, batch.branch, dctx)
        else:
            dfn += dctx

    dHf = np.repeat(dstmt / batch.stmt_len[:, None], batch.stmt_len, axis=0)
    dHf += np.repeat(dfn / batch.fn_len[:, None], batch.fn_len, axis=0)
    dH = np.zeros_like(fwd.H)
    dH[batch.mask] = dHf
    if shape.encoder == "bag":
        _bag_backward(params, batch.ids, fwd.cache, dH, grads)
    else:
        _attention_backward(params, batch.ids, fwd.cache, dH, grads, shape)
    return grads


def loss_and_grads(params, shape, batch, lambda1, lambda2):
    fwd = forward(params, shape, batch)
    total, lc, lt = losses(fwd, batch, lambda1, lambda2)
    return total, backward(params, shape, batch, fwd, lambda1, lambda2), fwd


def grad_check(params, shape: ModelShape, batch: BatchTensors, lambda1=1.0, lambda2=1.0, epsilon=1e-4):
    """Max relative error between analytic and central-difference gradients of the total loss."""
    _, grads, _ = loss_and_grads(params, shape, batch, lambda1, lambda2)
    worst = 0.0
    for name in sorted(params):
        theta = params[name]
        flat = theta.reshape(-1)
        g_a = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + epsilon
            up = losses(forward(params, shape, batch), batch, lambda1, lambda2)[0]
            flat[i] = old - epsilon
            down = losses(forward(params, shape, batch), batch, lambda1, lambda2)[0]
            flat[i] = old
            g_n = (up - down) / (2 * epsilon)
            err = abs(g_a[i] - g_n) / max(abs(g_a[i]), abs(g_n), 1e-8)
            worst = max(worst, err)
    return worst
