"""Abstract values for branch prediction.

Concrete runtime values recorded in execution traces are quantized into 12
abstract categories. Traces are ingested from line-delimited JSON files; see
:func:`read_traces` for the format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .codemodel import CONDITION_HEAD, LOOP_HEAD, SourceFunction
from .concepts import BP_ABSTRACT, ConceptVector, concept_set
from .errors import DanglingStatementId, MalformedLine, MalformedValue

BP_CONCEPTS = concept_set(BP_ABSTRACT)

VALUE_KINDS = ("boolean", "integer", "character", "pointer", "array-init")
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
REGULAR_LIMIT = 1000

_INDEX = {name: i for i, name in enumerate(BP_CONCEPTS.concept_names)}


@dataclass(frozen=True)
class TraceEvent:
    sid: int
    kind: str
    value: object = None


@dataclass(frozen=True)
class TraceRecord:
    function_id: str
    input_id: str
    events: tuple[TraceEvent, ...]


@dataclass(frozen=True)
class BranchRecord:
    function_id: str
    branch_statement_id: int
    input_id: str
    taken: int


def _one_hot(name: str, sid=None) -> ConceptVector:
    bits = [0] * BP_CONCEPTS.N
    bits[_INDEX[name]] = 1
    return ConceptVector(tuple(bits), sid)


def _abstract_name(kind: str, value) -> str:
    if kind == "boolean":
        if value is True or value == "true":
            return "true"
        if value is False or value == "false":
            return "false"
        raise MalformedValue(f"boolean value expected, got {value!r}")
    if kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise MalformedValue(f"integer value expected, got {value!r}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise MalformedValue(f"integer {value} outside signed 64-bit range")
        if value == 0:
            return "zero"
        if value > 0:
            return "positive-regular" if value <= REGULAR_LIMIT else "positive-large"
        return "negative-regular" if value >= -REGULAR_LIMIT else "negative-large"
    if kind == "character":
        if not isinstance(value, str) or len(value) != 1 or ord(value) > 0xFF:
            raise MalformedValue(f"single-byte character expected, got {value!r}")
        # ASCII letters only
        return "alphabetic" if ("A" <= value <= "Z" or "a" <= value <= "z") else "non-alphabetic"
    if kind == "pointer":
        if value == "null":
            return "null"
        if value == "nonnull":
            return "not-null"
        raise MalformedValue(f"pointer value must be 'null' or 'nonnull', got {value!r}")
    if kind == "array-init":
        if value is not None:
            raise MalformedValue(f"array-init events carry no value, got {value!r}")
        return "initialized"
    raise MalformedValue(f"unknown value kind {kind!r}")


def quantize(kind: str, value=None) -> ConceptVector:
    """Map one concrete value to its one-hot abstract-value vector."""
    return _one_hot(_abstract_name(kind, value))


def label_trace(trace: TraceRecord) -> list[ConceptVector]:
    """One vector per statement with events; the last event per statement wins.

    Output order follows each statement's first appearance in the trace.
    """
    latest: dict[int, ConceptVector] = {}
    for i, ev in enumerate(trace.events):
        try:
            name = _abstract_name(ev.kind, ev.value)
        except MalformedValue as exc:
            raise MalformedValue(str(exc), index=i) from None
        latest[ev.sid] = _one_hot(name, ev.sid)
    return list(latest.values())


def statement_value_labels(trace: TraceRecord, function: SourceFunction) -> list[ConceptVector]:
    """Per-labelable-statement vectors for one input; statements without events are all-zero."""
    by_sid = {v.statement_id: v for v in label_trace(trace)}
    zero = (0,) * BP_CONCEPTS.N
    return [by_sid.get(s.id, ConceptVector(zero, s.id)) for s in function.labelable]


def build_branch_records(traces, function: SourceFunction) -> list[BranchRecord]:
    valid = {s.id for s in function.statements}
    branch_ids = {s.id for s in function.statements if s.kind in (CONDITION_HEAD, LOOP_HEAD)}
    records = []
    for trace in traces:
        outcome: dict[int, bool] = {}
        for ev in trace.events:
            if ev.sid not in valid:
                raise DanglingStatementId(
                    f"trace {trace.function_id}/{trace.input_id} references statement {ev.sid}"
                )
            if ev.kind == "boolean" and ev.sid in branch_ids:
                outcome[ev.sid] = _abstract_name("boolean", ev.value) == "true"
        for sid in sorted(outcome):
            records.append(BranchRecord(trace.function_id, sid, trace.input_id, int(outcome[sid])))
    return records


def trace_to_json(trace: TraceRecord) -> dict:
    events = []
    for ev in trace.events:
        item = {"sid": ev.sid, "kind": ev.kind}
        if ev.kind != "array-init":
            item["value"] = ev.value
        events.append(item)
    return {"function_id": trace.function_id, "input_id": trace.input_id, "events": events}


def trace_from_json(obj: dict) -> TraceRecord:
    events = tuple(
        TraceEvent(int(e["sid"]), str(e["kind"]), e.get("value")) for e in obj["events"]
    )
    return TraceRecord(str(obj["function_id"]), str(obj["input_id"]), events)


def write_traces(path, traces) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps(trace_to_json(t), sort_keys=True) + "\n")


def read_traces(path) -> list[TraceRecord]:
    """Read a trace file: one ``{function_id, input_id, events: [{sid, kind, value}]}`` per line."""
    traces = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                traces.append(trace_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise MalformedLine(str(exc), lineno) from None
    return traces
