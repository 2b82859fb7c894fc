"""SFT-vs-concept-supervised comparisons and the concept-count sweep."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .concepts import ConceptSet, ConceptVector, concept_set, restrict_concepts
from .config import ExperimentConfig
from .dataset import DatasetRecord, split
from .metrics import Delta, EvalReport, delta_report, f1
from .probe import probe_f1
from .synth import synthesize_corpus
from .train import TrainConfig, TrainResult, encode_records, predict, train


@dataclass
class Splits:
    train: list
    val: list
    test: list
    probe: list


def synthetic_splits(seed: int, n: int = 2000, vuln_rate: float = 0.1, ratios=(0.8, 0.1, 0.1)) -> Splits:
    """A split synthetic VD corpus plus an independent, same-sized probe draw."""
    recs = split(synthesize_corpus(n, vuln_rate, seed), ratios, seed)
    probe = [replace(r, split="probe") for r in synthesize_corpus(n, vuln_rate, seed, prefix="probe")]
    by = {s: [r for r in recs if r.split == s] for s in ("train", "val", "test")}
    return Splits(by["train"], by["val"], by["test"], probe)


def splits_from_records(records, probe_records=None) -> Splits:
    by = {s: [r for r in records if r.split == s] for s in ("train", "val", "test", "probe")}
    probe = list(probe_records) if probe_records is not None else by["probe"]
    return Splits(by["train"], by["val"], by["test"], probe)


def project_records(records, source: ConceptSet, target: ConceptSet) -> list[DatasetRecord]:
    """Keep only ``target``'s columns of vectors labelled under ``source``."""
    if source.name != target.name:
        raise ValueError("cannot project across concept families")
    cols = [source.concept_names.index(c) for c in target.concept_names]
    out = []
    for r in records:
        vecs = tuple(ConceptVector(tuple(v.bits[c] for c in cols), v.statement_id) for v in r.concepts)
        out.append(replace(r, concepts=vecs))
    return out


def evaluate(result: TrainResult, records) -> EvalReport:
    """Task F1 plus the concept head's own micro F1 on ``records``."""
    enc = encode_records(records, result.vocab, result.shape.concepts, result.shape.max_len)
    pred = predict(result.params, result.shape, enc)
    threshold = result.config.threshold
    return f1(
        (pred.q >= threshold).astype(int),
        pred.end_labels.astype(int),
        (pred.concept_probs >= 0.5).astype(int),
        pred.concept_labels.astype(int),
    )


@dataclass
class ArmResult:
    name: str
    result: TrainResult
    test: EvalReport  # concept_f1 holds the probe F1 when a probe split exists
    head_concept_f1: float
    probe_f1: float | None


def run_arm(name, config: TrainConfig, splits: Splits, cset: ConceptSet | None = None,
            probe_cset: ConceptSet | None = None, probe: bool = True) -> ArmResult:
    cset = cset or concept_set(config.concept_set)
    full = probe_cset or concept_set(cset.name)
    res = train(config, project_records(splits.train, full, cset), project_records(splits.val, full, cset), cset)
    report = evaluate(res, project_records(splits.test, full, cset))
    pf = None
    if probe and splits.probe:
        pf = probe_f1(res, splits.probe, config.seed)[0]
    extra = {"arm": name, "seed": config.seed, "head_concept_f1": report.concept_f1, "probe_f1": pf}
    test = EvalReport(report.task_f1, report.precision, report.recall, report.counts,
                      pf if pf is not None else report.concept_f1, report.per_concept_f1, extra)
    return ArmResult(name, res, test, report.concept_f1, pf)


@dataclass
class Comparison:
    seed: int
    sft: ArmResult
    cc: ArmResult
    delta: Delta


def compare(base: TrainConfig, exp: ExperimentConfig, splits_for_seed=None, probe=None) -> list[Comparison]:
    """Train SFT (``sft_lambda1``) and concept-supervised (``cc_lambda1``) arms on every seed."""
    probe = exp.probe if probe is None else probe
    splits_for_seed = splits_for_seed or (lambda s: synthetic_splits(s, exp.n, exp.vuln_rate, exp.split_ratios))
    out = []
    for seed in exp.seeds:
        splits = splits_for_seed(seed)
        sft = run_arm("sft", replace(base, seed=seed, lambda1=exp.sft_lambda1), splits, probe=probe)
        cc = run_arm("cc", replace(base, seed=seed, lambda1=exp.cc_lambda1), splits, probe=probe)
        out.append(Comparison(seed, sft, cc, delta_report(cc.test, sft.test)))
    return out


def sweep_order(order_seed: int, n: int = 7) -> list[int]:
    """One random concept order shared by every training seed; prefixes give the nested subsets."""
    return [int(i) for i in np.random.default_rng(order_seed).permutation(n)]


@dataclass
class SweepPoint:
    k: int
    concepts: tuple[str, ...]
    seed: int
    task_f1: float
    probe_f1: float | None


def concept_sweep(base: TrainConfig, exp: ExperimentConfig, splits_for_seed=None, probe=None) -> list[SweepPoint]:
    """Concept-supervised runs with k = 1..N concepts; probes always target the full set."""
    probe = exp.probe if probe is None else probe
    splits_for_seed = splits_for_seed or (
        lambda s: synthetic_splits(s, exp.sweep_n, exp.vuln_rate, exp.sweep_split_ratios))
    full = concept_set(base.concept_set)
    order = sweep_order(exp.sweep_order_seed, full.N)
    points = []
    for seed in exp.sweep_seeds:
        splits = splits_for_seed(seed)
        for k in range(1, full.N + 1):
            cset = restrict_concepts(full, order[:k])
            arm = run_arm(f"k{k}", replace(base, seed=seed, lambda1=exp.cc_lambda1), splits, cset, full, probe)
            points.append(SweepPoint(k, cset.concept_names, seed, arm.test.task_f1, arm.probe_f1))
    return points


def sweep_medians(points) -> tuple[list[float], list[float]]:
    ks = sorted({p.k for p in points})
    task = [float(np.median([p.task_f1 for p in points if p.k == k])) for k in ks]
    probe = [
        float(np.median([p.probe_f1 for p in points if p.k == k]))
        if all(p.probe_f1 is not None for p in points if p.k == k) else float("nan")
        for k in ks
    ]
    return task, probe


def non_decreasing(xs) -> bool:
    return all(b >= a for a, b in zip(xs, xs[1:]))
