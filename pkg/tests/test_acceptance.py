"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Criteria 5-7 train many models and are marked ``slow`` (about 15 minutes in
total on one CPU core); deselect them with ``-m "not slow"``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from codeconcepts.cli import main
from codeconcepts.codemodel import segment
from codeconcepts.concepts import CANONICAL_NAMES, ConceptSet, ConceptVector, concept_set, extract_function
from codeconcepts.config import ExperimentConfig
from codeconcepts.dataset import Dataset, DatasetRecord, read_dataset, write_dataset
from codeconcepts.errors import AuditFailure
from codeconcepts.experiment import compare, concept_sweep, non_decreasing, sweep_medians, synthetic_splits
from codeconcepts.interp import run_function
from codeconcepts.model import concept_loss, grad_check, init_params, task_loss, total_loss
from codeconcepts.perturb import opposite_class_specs, perturb_deadcode, perturb_rename
from codeconcepts.train import TrainConfig
from codeconcepts.values import (
    BP_CONCEPTS, INT64_MAX, INT64_MIN, TraceEvent, TraceRecord, quantize, statement_value_labels,
)
from helpers import toy_batch, toy_shape

VD = concept_set("vd-vulnerable")
GOLDEN = Path(__file__).parent / "fixtures" / "golden"


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}" + (f" -- {detail}" if detail else ""))
        assert ok, f"criterion {number} failed: {detail}"
    return emit


# ---------------------------------------------------------------- 1


VD_ROWS = {
    "p = NULL;": {"null-assignment"},
    "if (p == NULL)": {"null-check"},
    "p->dims = 2;": {"pointer-dereference"},
    "p=(char *)malloc(total+1);": {"memory-allocation"},
    "char p[4];": {"memory-allocation"},
    "p[len] += 1;": {"buffer-access", "pointer-dereference"},
    "if (i <= strlen(p))": {"bounds-check"},
    "free(p);": {"memory-free"},
}


def _bp_labels(text, events):
    fn = segment(text)
    trace = events(fn) if callable(events) else run_function(fn)
    return {s.raw_text: v.active(BP_CONCEPTS) for s, v in zip(fn.labelable, statement_value_labels(trace, fn))}


def test_criterion_1_golden_extraction(report, tmp_path):
    t0 = time.perf_counter()
    mismatches = []
    # vulnerability-concept rows via the extract command over the fixture files
    out = tmp_path / "t1.jsonl"
    assert main(["extract", str(GOLDEN), "--out", str(out)]) == 0
    ds = read_dataset(out)
    seen = {}
    for r in ds.records:
        for s, v in zip(segment(r.source_text).labelable, r.concepts):
            seen[s.raw_text] = v.active(VD)
    for text, want in VD_ROWS.items():
        if seen.get(text) != want:
            mismatches.append((text, seen.get(text), want))
    # value-abstraction rows through the interpreter and trace ingestion
    got = _bp_labels("int x = 4; int y = 2; if (x > y) x = 0; if (x == y) y = 1;", None)
    checks = [(got["if (x > y)"], {"true"}), (got["if (x == y)"], {"false"})]
    got = _bp_labels("char x; x = 'M'; x = '='; char buf[2]; buf[0] = 'a';", None)
    checks += [(got["x = 'M';"], {"alphabetic"}), (got["x = '=';"], {"non-alphabetic"}),
               (got["buf[0] = 'a';"], {"initialized"})]
    strchr_text = "char *x = strchr(a + 1, '0');"
    for value, want in (("null", {"null"}), ("nonnull", {"not-null"})):
        got = _bp_labels(strchr_text, lambda fn, v=value: TraceRecord("f", "0", (TraceEvent(0, "pointer", v),)))
        checks.append((got[strchr_text], want))
    for (a, b, c), want in (((0, 5, 0), "zero"), ((3, 4, 5), "positive-regular"), ((40, 40, 1), "positive-large"),
                            ((-3, 4, 2), "negative-regular"), ((-40, 40, 0), "negative-large")):
        got = _bp_labels(f"int a = {a}; int b = {b}; int c = {c}; int x; x = a * b + c;", None)
        checks.append((got["x = a * b + c;"], {want}))
    # category ranges
    for kind, value, want in (("integer", 0, "zero"), ("integer", 1000, "positive-regular"),
                              ("integer", 1001, "positive-large"), ("integer", -1001, "negative-large"),
                              ("character", "=", "non-alphabetic"), ("character", "M", "alphabetic")):
        checks.append((quantize(kind, value).active(BP_CONCEPTS), {want}))
    mismatches += [(g, w) for g, w in checks if g != w]
    elapsed = time.perf_counter() - t0
    report(1, "golden extraction", not mismatches and elapsed < 1.0,
           f"{len(VD_ROWS)} concept rows, {len(checks)} value examples, {elapsed:.2f}s, mismatches={mismatches}")


# ---------------------------------------------------------------- 2


def test_criterion_2_quantization_partition(report):
    t0 = time.perf_counter()
    boundary = [-1001, -1000, -999, -1, 0, 1, 999, 1000, 1001]
    expected = ["negative-large", "negative-regular", "negative-regular", "negative-regular", "zero",
                "positive-regular", "positive-regular", "positive-regular", "positive-large"]
    got = [next(iter(quantize("integer", v).active(BP_CONCEPTS))) for v in boundary]
    rng = np.random.default_rng(2024)
    wide = rng.integers(INT64_MIN, INT64_MAX, size=500_000, dtype=np.int64, endpoint=True)
    near = rng.integers(-3000, 3001, size=500_000)
    numeric = [BP_CONCEPTS.concept_names.index(n) for n in
               ("zero", "positive-regular", "positive-large", "negative-regular", "negative-large")]
    bad = 0
    for v in wide.tolist() + near.tolist():
        bits = quantize("integer", v).bits
        bad += sum(bits) != 1 or sum(bits[i] for i in numeric) != 1
    elapsed = time.perf_counter() - t0
    report(2, "quantization partition", got == expected and bad == 0 and elapsed < 5.0,
           f"boundaries {'ok' if got == expected else got}, 10^6 random values with {bad} violations, {elapsed:.2f}s")


# ---------------------------------------------------------------- 3


def test_criterion_3_losses(report):
    rng = np.random.default_rng(3)
    errs = []
    y = (rng.random((5, 7)) < 0.5).astype(float)
    errs.append(abs(concept_loss(np.full((5, 7), 0.5), y) - math.log(2)) <= 1e-12)
    errs.append(abs(concept_loss(np.array([[0.25]]), np.array([[1.0]])) - 1.386294361119891) <= 1e-9)
    errs.append(abs(task_loss(np.array([0.5]), np.array([1.0])) - math.log(2)) <= 1e-9)
    errs.append(abs(task_loss(np.array([0.9]), np.array([1.0])) - 0.10536051565782628) <= 1e-9)
    errs.append(abs(task_loss(np.array([0.9]), np.array([0.0])) - 2.3025850929940455) <= 1e-9)
    errs.append(total_loss(1, 1, 0.5, 0.25) == 0.75)
    errs.append(total_loss(0, 1, 0.5, 0.25) == 0.25 and total_loss(1, 0, 0.5, 0.25) == 0.5)
    worst = 0.0
    for _ in range(1000):
        l1, l2, lc, lt, a, b = rng.random(6) * 5
        lhs = total_loss(a * l1, b * l2, lc, lt)
        rhs = a * total_loss(l1, 0, lc, lt) + b * total_loss(0, l2, lc, lt)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    errs.append(worst <= 1e-12)
    report(3, "loss correctness", all(errs), f"{sum(errs)}/{len(errs)} checks, linearity error {worst:.1e}")


# ---------------------------------------------------------------- 4


def test_criterion_4_gradient_check(report):
    t0 = time.perf_counter()
    vocab, batch = toy_batch()
    results = {}
    for encoder in ("bag", "attention"):
        for integration, concat in (("sequential", False), ("sequential", True), ("parallel", False)):
            shape = toy_shape(len(vocab), encoder, integration, concat, d=16 if encoder == "attention" else 8)
            results[(encoder, integration, concat)] = grad_check(init_params(shape, 0), shape, batch)
    worst = max(results.values())
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{e}/{i}{'+concat' if c else ''}={v:.1e}" for (e, i, c), v in results.items())
    report(4, "gradient check", worst < 1e-4 and elapsed < 30, f"{detail}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 5 and 6


@pytest.fixture(scope="module")
def comparison():
    t0 = time.perf_counter()
    rows = compare(TrainConfig(), ExperimentConfig(seeds=(0, 1, 2, 3, 4), n=2000, vuln_rate=0.1))
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_task_f1(report, comparison):
    rows, elapsed = comparison
    sft = float(np.median([c.sft.test.task_f1 for c in rows]))
    cc = float(np.median([c.cc.test.task_f1 for c in rows]))
    per_seed = ", ".join(f"{c.sft.test.task_f1:.3f}/{c.cc.test.task_f1:.3f}" for c in rows)
    report(5, "CC vs SFT task F1", cc >= sft and cc - sft > 0 and elapsed < 600,
           f"median SFT {sft:.3f}, CC {cc:.3f} (per seed SFT/CC: {per_seed}); {elapsed:.0f}s incl. probes")


@pytest.mark.slow
def test_criterion_6_probe_f1(report, comparison):
    rows, _ = comparison
    sft = float(np.median([c.sft.probe_f1 for c in rows]))
    cc = float(np.median([c.cc.probe_f1 for c in rows]))
    report(6, "CC vs SFT probe micro-F1", cc > sft, f"median SFT {sft:.3f}, CC {cc:.3f}")


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_7_concept_sweep(report):
    t0 = time.perf_counter()
    points = concept_sweep(TrainConfig(), ExperimentConfig(sweep_seeds=(0, 1, 2)))
    task, probe = sweep_medians(points)
    ok = non_decreasing(task) and non_decreasing(probe)
    report(7, "concept-count sweep", ok,
           f"median task F1 {np.round(task, 3).tolist()}, median probe F1 {np.round(probe, 3).tolist()}; "
           f"{time.perf_counter() - t0:.0f}s")


# ---------------------------------------------------------------- 8


def _original_vectors(perturbed):
    """Re-extract ``perturbed`` and drop every inserted ``if (0) { call; }`` block."""
    fn = segment(perturbed.source_text)
    vecs = extract_function(fn, VD)
    keep, skip = [], 0
    for s, v in zip(fn.labelable, vecs):
        if skip:
            skip -= 1
            continue
        if s.raw_text == "if (0)":
            skip = 1
            continue
        keep.append(v.bits)
    return keep


def test_criterion_8_perturbation_soundness(report):
    splits = synthetic_splits(0, 2000)
    specs = opposite_class_specs(splits.train, seed=0)
    diffs = label_changes = audit_failures = 0
    for r in splits.test:
        spec = specs[r.end_label]
        try:  # the transforms audit themselves and raise on any changed vector
            renamed = perturb_rename(r, spec)
            dead = perturb_deadcode(r, spec)
            both = perturb_deadcode(renamed, spec)
        except AuditFailure:
            audit_failures += 1
            continue
        original = [v.bits for v in r.concepts]
        # independent re-extraction oracle, separate from the built-in audit
        diffs += [v.bits for v in extract_function(segment(renamed.source_text), VD)] != original
        diffs += _original_vectors(dead) != original
        diffs += _original_vectors(both) != original
        label_changes += (renamed.end_label, dead.end_label, both.end_label) != (r.end_label,) * 3
        assert renamed.source_text != r.source_text and dead.source_text != r.source_text
    report(8, "perturbation soundness", diffs == 0 and label_changes == 0 and audit_failures == 0,
           f"{len(splits.test)} test records x 3 transforms, {audit_failures} audit failures, "
           f"{diffs} re-extraction diffs, {label_changes} label changes")


# ---------------------------------------------------------------- 9


def test_criterion_9_determinism(report, tmp_path):
    args = ["--set", "experiment.seeds=0,1", "--set", "experiment.n=400", "--set", "experiment.sweep_seeds=0",
            "--set", "experiment.sweep_n=300", "--set", "train.epochs=4", "--set", "train.warmup_epochs=1",
            "--concept-sweep"]
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["experiment", "--out", str(out)] + args) == 0
        runs.append({p.name: p.read_bytes() for p in out.iterdir() if p.name != "manifest.json"})
    same = runs[0].keys() == runs[1].keys() and all(runs[0][n] == runs[1][n] for n in runs[0])
    logs = sorted(n for n in runs[0] if n.startswith("metrics_"))
    ckpts = sorted(n for n in runs[0] if n.startswith("checkpoint_"))
    m0 = json.loads((tmp_path / "run0" / "manifest.json").read_text())["outputs"]
    m1 = json.loads((tmp_path / "run1" / "manifest.json").read_text())["outputs"]
    same_sums = sorted(m0.values()) == sorted(m1.values())
    report(9, "determinism", same and same_sums and logs and ckpts,
           f"{len(logs)} metric logs and {len(ckpts)} checkpoints bit-identical across two runs")


# ---------------------------------------------------------------- 10


def _random_dataset(rng, cset, n):
    recs = []
    alphabet = list("abcxyz_ (){};=*+-<>[]\"'\\\n\t") + ["é", "中", " "]
    for i in range(n):
        task = "bp" if rng.random() < 0.5 else "vd"
        n_vec = int(rng.integers(0, 8))
        vecs = tuple(
            ConceptVector(tuple(int(b) for b in rng.integers(0, 2, cset.N)),
                          None if rng.random() < 0.1 else int(rng.integers(0, 100)))
            for _ in range(n_vec))
        text = "".join(rng.choice(alphabet, size=int(rng.integers(0, 60))))
        recs.append(DatasetRecord(
            record_id=f"{cset.name}-{i}-{rng.integers(1 << 62)}", task=task,
            function_id=f"f{int(rng.integers(0, n // 2 + 1))}", source_text=text, concepts=vecs,
            end_label=int(rng.integers(0, 2)),
            branch_statement_id=int(rng.integers(0, 50)) if task == "bp" or rng.random() < 0.2 else None,
            split=[None, "train", "val", "test", "probe"][int(rng.integers(0, 5))]))
    return Dataset(cset, recs)


def test_criterion_10_roundtrip(report, tmp_path):
    rng = np.random.default_rng(10)
    sets = []
    for name, canon in sorted(CANONICAL_NAMES.items()):
        sets.append(ConceptSet(name, canon))
        for _ in range(3):
            k = int(rng.integers(1, len(canon) + 1))
            keep = sorted(rng.choice(len(canon), size=k, replace=False).tolist())
            sets.append(ConceptSet(name, tuple(canon[i] for i in keep)))
    per = 10_000 // len(sets) + 1
    total = failures = 0
    for j, cset in enumerate(sets):
        ds = _random_dataset(rng, cset, per)
        path = tmp_path / f"d{j}.jsonl"
        write_dataset(path, ds)
        back = read_dataset(path, cset)
        total += len(ds.records)
        failures += back.concept_set != cset or back.records != ds.records
    report(10, "dataset round-trip", failures == 0 and total >= 10_000,
           f"{total} random records over {len(sets)} concept-set headers, {failures} mismatching files")
