"""Small hand-built records and batches shared by the numeric tests."""

import numpy as np

from codeconcepts.codemodel import segment
from codeconcepts.concepts import concept_set, extract_function
from codeconcepts.dataset import DatasetRecord
from codeconcepts.model import BatchTensors, ModelShape
from codeconcepts.train import build_vocab, collate, encode_records

VD = concept_set("vd-vulnerable")

SNIPPETS = [
    ("p = malloc(n); if (p == NULL) return; p[0] = 1;", 1),
    ("q = NULL; free(q); x = q->len;", 1),
    ("if (i <= strlen(s)) s[i] = 0; free(s);", 0),
]


def vd_records(snippets=SNIPPETS):
    out = []
    for k, (text, label) in enumerate(snippets):
        fn = segment(text, f"t{k}")
        out.append(DatasetRecord(f"t{k}", "vd", f"t{k}", text, tuple(extract_function(fn, VD)), label))
    return out


def toy_batch(records=None, max_len=64):
    records = records or vd_records()
    vocab = build_vocab(records)
    enc = encode_records(records, vocab, VD.N, max_len)
    return vocab, collate(enc)


def toy_shape(vocab_size, encoder="bag", integration="sequential", concat=False, d=8, max_len=64):
    return ModelShape(vocab_size, d, VD.N, encoder=encoder, heads=2, ffn=16, max_len=max_len,
                      integration=integration, concat=concat)


def manual_batch(stmt_tokens, concepts=7, end_labels=None, branch=None):
    """One function per entry of ``stmt_tokens`` (a list of statements, each a list of token ids)."""
    B = len(stmt_tokens)
    T = max(sum(len(s) for s in fn) for fn in stmt_tokens)
    ids = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    lens = []
    for b, fn in enumerate(stmt_tokens):
        flat = [t for s in fn for t in s]
        ids[b, : len(flat)] = flat
        mask[b, : len(flat)] = True
        lens += [len(s) for s in fn]
    S = len(lens)
    return BatchTensors(
        ids=ids, mask=mask, stmt_len=np.array(lens, dtype=np.int64),
        fn_stmts=np.array([len(fn) for fn in stmt_tokens], dtype=np.int64),
        concept_labels=np.zeros((S, concepts)), end_labels=np.asarray(end_labels or [0] * B, dtype=np.float64),
        branch=np.asarray(branch if branch is not None else [-1] * B, dtype=np.int64),
    )
