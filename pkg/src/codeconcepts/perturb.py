"""Semantics-preserving perturbations of VD records, with a label audit.

Two transforms: consistent identifier renaming, and insertion of API calls
wrapped in ``if (0) { ... }`` blocks. Both re-extract concepts and refuse to
return a record whose original statements changed labels.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .codemodel import DECLARATION, IDENTIFIER, SourceFunction, segment
from .concepts import DEFAULT_CONFIG, ConceptSet, ExtractorConfig, concept_set, extract, extract_vd, extract_nvc
from .dataset import DatasetRecord
from .errors import AuditFailure, PreconditionViolated, VocabExhausted


@dataclass(frozen=True)
class PerturbSpec:
    rename_vocab: tuple[str, ...] = ()
    deadcode_apis: tuple[str, ...] = ()
    seed: int = 0
    rename: bool = True
    deadcode_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rename_vocab", tuple(self.rename_vocab))
        object.__setattr__(self, "deadcode_apis", tuple(self.deadcode_apis))


def _record_rng(spec: PerturbSpec, record: DatasetRecord, salt: str):
    digest = hashlib.sha256(f"{spec.seed}:{salt}:{record.record_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def local_identifier_tokens(fn: SourceFunction, config: ExtractorConfig = DEFAULT_CONFIG):
    """Identifier tokens naming local variables or parameters.

    Excluded: called names, struct members, type names and configured
    function/null names. The function's own name is followed by ``(`` and so
    is excluded as well.
    """
    reserved = config.reserved_names
    out = []
    for st in fn.statements:
        toks = st.tokens
        for k, t in enumerate(toks):
            if t.kind != IDENTIFIER or t.text in reserved:
                continue
            nxt = toks[k + 1] if k + 1 < len(toks) else None
            prev = toks[k - 1] if k > 0 else None
            if nxt is not None and nxt.text == "(":
                continue
            if prev is not None and prev.text in ("->", ".", "struct", "union", "enum", "goto"):
                continue
            if nxt is not None and nxt.kind == IDENTIFIER:
                continue  # type name in a declaration or parameter
            if nxt is not None and nxt.text == ":" and st.kind != DECLARATION:
                continue  # goto label
            if t.text.endswith("_t"):
                continue
            out.append(t)
    return out


def _label(fn, cset, config):
    return [extract(s, cset, config) for s in fn.labelable]


def _audit(original, perturbed, record_id):
    diffs = []
    for k, (a, b) in enumerate(zip(original, perturbed)):
        if a.bits != b.bits:
            diffs.append((k, a.bits, b.bits))
    if len(original) != len(perturbed):
        diffs.append(("len", len(original), len(perturbed)))
    if diffs:
        raise AuditFailure(f"perturbation of {record_id} changed {len(diffs)} concept vectors", diffs)


def perturb_rename(
    record: DatasetRecord,
    spec: PerturbSpec,
    cset: ConceptSet | None = None,
    config: ExtractorConfig = DEFAULT_CONFIG,
) -> DatasetRecord:
    if record.task != "vd":
        raise ValueError("only vd records can be perturbed")
    if not spec.rename:
        return record
    cset = cset or concept_set("vd-vulnerable")
    fn = segment(record.source_text, record.function_id)
    toks = local_identifier_tokens(fn, config)
    names = list(dict.fromkeys(t.text for t in toks))
    existing = {t.text for s in fn.statements for t in s.tokens if t.kind == IDENTIFIER}
    pool = [v for v in dict.fromkeys(spec.rename_vocab) if v not in existing and v not in config.reserved_names]
    if spec.rename and not spec.rename_vocab:
        raise VocabExhausted("renaming enabled with an empty vocabulary")
    if len(pool) < len(names):
        raise VocabExhausted(
            f"record {record.record_id} needs {len(names)} fresh names, vocabulary offers {len(pool)}"
        )
    if not names:
        return record
    rng = _record_rng(spec, record, "rename")
    chosen = rng.choice(len(pool), size=len(names), replace=False)
    mapping = {old: pool[int(j)] for old, j in zip(names, chosen)}
    text = record.source_text
    for t in sorted(toks, key=lambda t: t.start, reverse=True):
        text = text[: t.start] + mapping[t.text] + text[t.end:]
    new_fn = segment(text, record.function_id)
    before = _label(fn, cset, config)
    after = _label(new_fn, cset, config)
    _audit(before, after, record.record_id)
    _audit(list(record.concepts), after, record.record_id)
    return replace(record, source_text=text, concepts=tuple(after))


def _insertion_points(fn: SourceFunction):
    """Character offsets just after ';'-terminated statements inside the body."""
    stmts = fn.statements
    has_header = len(stmts) > 1 and stmts[0].kind == DECLARATION and stmts[1].kind == "block-open"
    depth = 0
    points = []
    for k, st in enumerate(stmts):
        if st.kind == "block-open":
            depth += 1
        elif st.kind == "block-close":
            depth -= 1
        if not st.labelable or st.tokens[-1].text != ";":
            continue
        if has_header and depth < 1:
            continue
        nxt = stmts[k + 1] if k + 1 < len(stmts) else None
        if nxt is not None and nxt.tokens[0].text in ("else", "while"):
            continue
        points.append(st.tokens[-1].end)
    return points


def perturb_deadcode(
    record: DatasetRecord,
    spec: PerturbSpec,
    cset: ConceptSet | None = None,
    config: ExtractorConfig = DEFAULT_CONFIG,
) -> DatasetRecord:
    if record.task != "vd":
        raise ValueError("only vd records can be perturbed")
    if spec.deadcode_count <= 0 or not spec.deadcode_apis:
        return record
    cset = cset or concept_set("vd-vulnerable")
    fn = segment(record.source_text, record.function_id)
    points = _insertion_points(fn)
    if not points:
        return record
    rng = _record_rng(spec, record, "deadcode")
    k = min(spec.deadcode_count, len(points))
    where = sorted(int(points[j]) for j in rng.choice(len(points), size=k, replace=False))
    calls = [spec.deadcode_apis[int(j)] for j in rng.integers(len(spec.deadcode_apis), size=k)]
    text = record.source_text
    inserted = []  # (start, end) in the new text
    shift = 0
    for pos, call in zip(where, calls):
        snippet = f" if (0) {{ {call}; }}"
        at = pos + shift
        text = text[:at] + snippet + text[at:]
        inserted.append((at, at + len(snippet)))
        shift += len(snippet)
    new_fn = segment(text, record.function_id)
    new_labels = _label(new_fn, cset, config)
    kept = [
        v
        for s, v in zip(new_fn.labelable, new_labels)
        if not any(a <= s.tokens[0].start < b for a, b in inserted)
    ]
    _audit(_label(fn, cset, config), kept, record.record_id)
    _audit(list(record.concepts), kept, record.record_id)
    return replace(record, source_text=text, concepts=tuple(new_labels))


def _identifiers_by_class(records, config):
    seen = {0: Counter(), 1: Counter()}
    calls = {0: Counter(), 1: Counter()}
    for r in records:
        fn = segment(r.source_text, r.function_id)
        for t in local_identifier_tokens(fn, config):
            seen[r.end_label][t.text] += 1
        for s in fn.labelable:
            if any(extract_vd(s, config).bits):
                continue
            try:
                bits = extract_nvc(s, config).bits
            except PreconditionViolated:
                continue
            if bits[0] and s.kind not in ("condition-head", "loop-head") and "=" not in [t.text for t in s.tokens]:
                calls[r.end_label][s.tokens[0].text] += 1
    return seen, calls


def opposite_class_specs(
    train_records, seed: int, config: ExtractorConfig = DEFAULT_CONFIG, deadcode_count: int = 1
) -> dict[int, PerturbSpec]:
    """Per end-label specs whose names and calls appear only in the other class of ``train_records``."""
    seen, calls = _identifiers_by_class(train_records, config)
    specs = {}
    for label in (0, 1):
        other = 1 - label
        vocab = sorted(n for n in seen[other] if n not in seen[label])
        apis = sorted(f"{c}(0)" for c in calls[other] if c not in calls[label])
        specs[label] = PerturbSpec(tuple(vocab), tuple(apis), seed, True, deadcode_count)
    return specs
