"""Dataset records, the line-delimited file format, and splitting.

A dataset file starts with a header line naming the concept set, followed by
one JSON record per line::

    {"format": "codeconcepts-dataset", "version": 1,
     "concept_set": {"name": "vd-vulnerable", "concepts": [...], "version": 1}}
    {"record_id": "...", "task": "vd", "function_id": "...", "source_text": "...",
     "concepts": [[sid, "0100000"], ...], "end_label": 0,
     "branch_statement_id": null, "split": "train"}
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .concepts import CANONICAL_NAMES, ConceptSet, ConceptVector
from .errors import DataError, EmptyDataset, MalformedLine, SchemaMismatch

FORMAT = "codeconcepts-dataset"
FORMAT_VERSION = 1
SPLITS = ("train", "val", "test", "probe")
TASKS = ("vd", "bp")


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    task: str
    function_id: str
    source_text: str
    concepts: tuple[ConceptVector, ...]
    end_label: int
    branch_statement_id: int | None = None
    split: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.end_label not in (0, 1):
            raise ValueError(f"end_label must be 0 or 1, got {self.end_label!r}")
        if self.split is not None and self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.task == "bp" and self.branch_statement_id is None:
            raise ValueError("bp records need a branch_statement_id")

    def label_matrix(self) -> np.ndarray:
        return np.array([c.bits for c in self.concepts], dtype=np.float64).reshape(len(self.concepts), -1)


@dataclass
class Dataset:
    concept_set: ConceptSet
    records: list[DatasetRecord]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_split(self, split: str) -> list[DatasetRecord]:
        return [r for r in self.records if r.split == split]


def record_to_json(rec: DatasetRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "task": rec.task,
        "function_id": rec.function_id,
        "source_text": rec.source_text,
        "concepts": [[c.statement_id, "".join(str(b) for b in c.bits)] for c in rec.concepts],
        "end_label": rec.end_label,
        "branch_statement_id": rec.branch_statement_id,
        "split": rec.split,
    }


def record_from_json(obj: dict, width: int) -> DatasetRecord:
    concepts = []
    for sid, bits in obj["concepts"]:
        if len(bits) != width or set(bits) - {"0", "1"}:
            raise ValueError(f"concept vector {bits!r} does not match concept set width {width}")
        concepts.append(ConceptVector(tuple(int(b) for b in bits), None if sid is None else int(sid)))
    return DatasetRecord(
        record_id=str(obj["record_id"]),
        task=obj["task"],
        function_id=str(obj["function_id"]),
        source_text=obj["source_text"],
        concepts=tuple(concepts),
        end_label=obj["end_label"],
        branch_statement_id=obj.get("branch_statement_id"),
        split=obj.get("split"),
    )


def _header(cset: ConceptSet) -> dict:
    return {"format": FORMAT, "version": FORMAT_VERSION, "concept_set": cset.to_header()}


def write_dataset(path, dataset: Dataset) -> None:
    width = dataset.concept_set.N
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_header(dataset.concept_set), sort_keys=True) + "\n")
        for rec in dataset.records:
            if any(len(c.bits) != width for c in rec.concepts):
                raise DataError(f"record {rec.record_id} has vectors of the wrong width")
            fh.write(json.dumps(record_to_json(rec), sort_keys=True, ensure_ascii=False) + "\n")


def _parse_header(line: str) -> ConceptSet:
    try:
        head = json.loads(line)
    except ValueError as exc:
        raise MalformedLine(f"bad header: {exc}", 1) from None
    if not isinstance(head, dict) or head.get("format") != FORMAT:
        raise SchemaMismatch("missing or foreign dataset header")
    if head.get("version") != FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported format version {head.get('version')!r}")
    cs = head.get("concept_set") or {}
    name = cs.get("name")
    names = cs.get("concepts")
    if name not in CANONICAL_NAMES:
        raise SchemaMismatch(f"unknown concept set {name!r}")
    if not isinstance(names, list) or not names:
        raise SchemaMismatch("header concept list missing")
    unknown = [c for c in names if c not in CANONICAL_NAMES[name]]
    if unknown:
        raise SchemaMismatch(f"unknown concept names {unknown} for {name}")
    try:
        return ConceptSet(name, tuple(names), cs.get("version", 1))
    except ValueError as exc:
        raise SchemaMismatch(str(exc)) from None


def read_dataset(path, expected: ConceptSet | None = None) -> Dataset:
    with Path(path).open(encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise EmptyDataset(f"{path}: empty dataset file")
    cset = _parse_header(lines[0])
    if expected is not None and (
        expected.name != cset.name or expected.concept_names != cset.concept_names
    ):
        raise SchemaMismatch(
            f"{path}: header concepts {list(cset.concept_names)} differ from expected {list(expected.concept_names)}"
        )
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            records.append(record_from_json(json.loads(line), cset.N))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedLine(str(exc), lineno) from None
    return Dataset(cset, records)


def _stratified_order(records, rng) -> list[str]:
    """Function ids ordered so that each stratum is spread evenly along the list."""
    groups = defaultdict(list)
    for r in records:
        groups[r.function_id].append(r.end_label)
    strata = defaultdict(list)
    for fid in sorted(groups):
        labels = groups[fid]
        strata[int(np.mean(labels) >= 0.5)].append(fid)
    keyed = []
    for label in sorted(strata):
        fids = strata[label]
        perm = rng.permutation(len(fids))
        for pos, k in enumerate(perm):
            keyed.append(((pos + 0.5) / len(fids), label, fids[k]))
    keyed.sort()
    return [fid for _, _, fid in keyed]


def _apportion(total: int, ratios) -> list[int]:
    raw = [total * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    rest = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:rest]:
        counts[k] += 1
    return counts


def _assign(records, ratios, seed, names) -> dict[str, str]:
    if not records:
        raise EmptyDataset("cannot split an empty dataset")
    if len(ratios) != len(names):
        raise ValueError("one ratio per split name")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be nonnegative and sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    order = _stratified_order(records, rng)
    counts = _apportion(len(order), ratios)
    assign = {}
    pos = 0
    for name, c in zip(names, counts):
        for fid in order[pos:pos + c]:
            assign[fid] = name
        pos += c
    return assign


def split(records, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[DatasetRecord]:
    """Assign train/val/test by function id, stratified by end label, deterministic in ``seed``."""
    records = list(records)
    assign = _assign(records, ratios, seed, ("train", "val", "test"))
    return [replace(r, split=assign[r.function_id]) for r in records]


def carve_probe(records, fraction: float = 2 / 7, seed: int = 0) -> list[DatasetRecord]:
    """Mark a disjoint, stratified function-id partition as the probe split.

    Remaining records keep ``split=None`` and are meant to be passed to :func:`split`.
    """
    if not 0 < fraction < 1:
        raise ValueError("probe fraction must be in (0, 1)")
    records = list(records)
    assign = _assign(records, (fraction, 1 - fraction), seed, ("probe", None))
    return [replace(r, split=assign[r.function_id]) for r in records]


def function_ids(records, splits=None) -> set[str]:
    return {r.function_id for r in records if splits is None or r.split in splits}
