"""``codeconcepts`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure,
4 extraction finished but some files or functions failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .codemodel import segment, split_functions
from .concepts import CANONICAL_NAMES, BP_ABSTRACT, concept_set, extract_function, restrict_concepts
from .config import load_config
from .dataset import Dataset, DatasetRecord, carve_probe, read_dataset, split, write_dataset
from .errors import CodeConceptsError, DataError, EmptyDataset, NumericError
from .experiment import (
    compare, concept_sweep, evaluate, non_decreasing, project_records, splits_from_records, sweep_medians,
)
from .manifest import write_manifest
from .metrics import EvalReport, format_deltas
from .perturb import opposite_class_specs, perturb_deadcode, perturb_rename
from .probe import evaluate_probe, fit_holdout_split, train_probe
from .synth import synthesize_bp_corpus, synthesize_corpus
from .train import load_checkpoint, save_checkpoint, train, write_metrics
from .values import build_branch_records, read_traces, statement_value_labels

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _say(msg):
    print(msg, file=sys.stderr)


def _manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------- extract


def _load_labels(path):
    labels = {}
    if path is None:
        return labels
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                obj = json.loads(line)
                labels[str(obj["function_id"])] = int(obj["end_label"])
    return labels


def cmd_extract(args, cfg):
    src = Path(args.source_dir)
    if not src.is_dir():
        raise DataError(f"{src}: not a directory")
    files = sorted(p for p in src.rglob("*.c") if p.is_file())
    if not files:
        raise EmptyDataset(f"{src}: no .c files found")
    cset = concept_set(args.concept_set)
    labels = _load_labels(args.labels)
    traces = {}
    if cset.name == BP_ABSTRACT:
        if args.traces is None:
            raise DataError("bp-abstract extraction needs --traces")
        for t in read_traces(args.traces):
            traces.setdefault(t.function_id, []).append(t)
    records, failures = [], []
    for path in files:
        rel = path.relative_to(src).as_posix()
        try:
            text = path.read_text(encoding="utf-8")
            units = split_functions(text)
        except (OSError, UnicodeDecodeError, CodeConceptsError) as exc:
            failures.append(f"{path}: {exc}")
            continue
        for name, body in units:
            fid = f"{rel}::{name}"
            try:
                fn = segment(body, fid)
                if cset.name == BP_ABSTRACT:
                    fn_traces = traces.get(fid, [])
                    by_input = {t.input_id: t for t in fn_traces}
                    for br in build_branch_records(fn_traces, fn):
                        vecs = statement_value_labels(by_input[br.input_id], fn)
                        records.append(DatasetRecord(
                            f"{fid}#{br.input_id}#{br.branch_statement_id}", "bp", fid, body,
                            tuple(vecs), br.taken, br.branch_statement_id))
                else:
                    vecs = extract_function(fn, cset)
                    records.append(DatasetRecord(fid, "vd", fid, body, tuple(vecs), labels.get(fid, 0)))
            except CodeConceptsError as exc:
                failures.append(f"{path}:{name}: {exc}")
    for f in failures:
        _say(f"extract: {f}")
    if not records:
        raise DataError(f"no functions extracted from {src} ({len(failures)} failures)")
    write_dataset(args.out, Dataset(cset, records))
    write_manifest(_manifest_path(args.out), "extract", {"concept_set": cset.to_header(),
                   "failures": failures}, files, [args.out])
    _say(f"extract: {len(records)} records from {len(files)} files, {len(failures)} failures")
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------- synth / split / perturb


def cmd_synth(args, cfg):
    if args.task == "vd":
        recs = synthesize_corpus(args.n, args.rate, args.seed)
        cset = concept_set("vd-vulnerable")
    else:
        recs = synthesize_bp_corpus(args.n, args.inputs, args.seed)
        cset = concept_set(BP_ABSTRACT)
    write_dataset(args.out, Dataset(cset, recs))
    outputs = [args.out]
    if args.probe_out:
        if args.task == "vd":
            probe = synthesize_corpus(args.n, args.rate, args.seed, prefix="probe")
        else:
            probe = synthesize_bp_corpus(args.n, args.inputs, args.seed, prefix="bp-probe")
        write_dataset(args.probe_out, Dataset(cset, [replace(r, split="probe") for r in probe]))
        outputs.append(args.probe_out)
    write_manifest(_manifest_path(args.out), "synth", vars_json(args), [], outputs)
    return EXIT_OK


def vars_json(args):
    return {k: v for k, v in vars(args).items() if k != "func" and _jsonable(v)}


def _jsonable(v):
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def _ratios(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad ratios {text!r}") from None
    return vals


def cmd_split(args, cfg):
    ds = read_dataset(args.dataset)
    recs = ds.records
    probe = []
    if args.probe_fraction:
        carved = carve_probe(recs, args.probe_fraction, args.seed)
        probe = [r for r in carved if r.split == "probe"]
        recs = [r for r in carved if r.split is None]
    recs = split(recs, _ratios(args.ratios), args.seed) + probe
    write_dataset(args.out, Dataset(ds.concept_set, recs))
    write_manifest(_manifest_path(args.out), "split", vars_json(args), [args.dataset], [args.out])
    return EXIT_OK


def perturb_records(records, train_records, mode, seed, count=1):
    """Perturb VD ``records`` with names and calls drawn from the opposite class of ``train_records``."""
    if mode == "identity":
        return list(records)
    specs = opposite_class_specs(train_records, seed, deadcode_count=count)
    out = []
    for r in records:
        spec = specs[r.end_label]
        if mode in ("rename", "both"):
            r = perturb_rename(r, spec)
        if mode in ("deadcode", "both"):
            r = perturb_deadcode(r, spec)
        out.append(r)
    return out


def cmd_perturb(args, cfg):
    ds = read_dataset(args.dataset)
    train_recs = ds.by_split("train") or ds.records
    targets = ds.by_split(args.split) if args.split else ds.records
    if not targets:
        raise EmptyDataset(f"{args.dataset}: no records in split {args.split!r}")
    out = perturb_records(targets, train_recs, args.mode, args.seed, args.count)
    write_dataset(args.out, Dataset(ds.concept_set, out))
    write_manifest(_manifest_path(args.out), "perturb", vars_json(args), [args.dataset], [args.out])
    _say(f"perturb: {len(out)} records, audit passed")
    return EXIT_OK


# ---------------------------------------------------------------- train / probe / eval


def _restricted(ds, concepts_arg):
    if not concepts_arg:
        return ds.concept_set, ds.records
    try:
        keep = [int(x) for x in concepts_arg.split(",")]
    except ValueError:
        raise UsageError(f"bad concept indices {concepts_arg!r}") from None
    cset = restrict_concepts(ds.concept_set, keep)
    return cset, project_records(ds.records, ds.concept_set, cset)


def cmd_train(args, cfg):
    ds = read_dataset(args.dataset)
    cset, recs = _restricted(ds, args.concepts)
    tcfg = replace(cfg.train, concept_set=cset.name)
    train_recs = [r for r in recs if r.split == "train"]
    val_recs = [r for r in recs if r.split == "val"]
    if not train_recs:
        raise EmptyDataset(f"{args.dataset}: no train split (run `codeconcepts split` first)")
    res = train(tcfg, train_recs, val_recs, cset)
    digest = save_checkpoint(args.out, res)
    outputs = [args.out]
    if args.metrics:
        write_metrics(args.metrics, res.metrics)
        outputs.append(args.metrics)
    write_manifest(_manifest_path(args.out), "train", {"train": tcfg.to_dict(), "concepts": list(cset.concept_names)},
                   [args.dataset], outputs)
    _say(f"train: best epoch {res.best_epoch}, checkpoint sha256 {digest}")
    return EXIT_OK


def cmd_probe(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.probe_dataset)
    fit, held = fit_holdout_split(ds.records, args.seed)
    probe = train_probe(ckpt, fit, args.seed, args.layer)
    report = evaluate_probe(probe, ckpt, held)
    report = replace(report, extra={"layer": args.layer, "fit_records": len(fit), "heldout_records": len(held)})
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    write_manifest(_manifest_path(args.out), "probe", vars_json(args), [args.checkpoint, args.probe_dataset], [args.out])
    print(f"probe micro-F1 {report.concept_f1:.4f}")
    return EXIT_OK


def cmd_eval(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    recs = project_records(ds.records, ds.concept_set, ckpt.concept_set) \
        if ds.concept_set.concept_names != ckpt.concept_set.concept_names else ds.records
    targets = [r for r in recs if r.split == args.split]
    if not targets:
        raise EmptyDataset(f"{args.dataset}: no records in split {args.split!r}")
    clean = evaluate(ckpt, targets)
    extra = {"split": args.split, "clean_f1": clean.task_f1}
    report = clean
    if args.perturb:
        train_recs = [r for r in ds.records if r.split == "train"] or ds.records
        perturbed = perturb_records([r for r in ds.records if r.split == args.split], train_recs,
                                    args.perturb, args.seed)
        perturbed = project_records(perturbed, ds.concept_set, ckpt.concept_set) \
            if ds.concept_set.concept_names != ckpt.concept_set.concept_names else perturbed
        report = evaluate(ckpt, perturbed)
        extra.update({"perturb": args.perturb, "perturbed_f1": report.task_f1, "audit_diffs": 0})
    report = replace(report, extra=extra)
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    write_manifest(_manifest_path(args.out), "eval", vars_json(args), [args.checkpoint, args.dataset], [args.out])
    print(f"task F1 {report.task_f1:.4f}" + (f" (clean {clean.task_f1:.4f})" if args.perturb else ""))
    return EXIT_OK


# ---------------------------------------------------------------- experiment


def cmd_experiment(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = cfg.experiment
    inputs = []
    splits_for_seed = None
    if args.dataset:
        ds = read_dataset(args.dataset)
        probe_recs = read_dataset(args.probe_dataset).records if args.probe_dataset else None
        inputs = [args.dataset] + ([args.probe_dataset] if args.probe_dataset else [])
        fixed = splits_from_records(ds.records, probe_recs)
        if not fixed.train or not fixed.test:
            raise EmptyDataset(f"{args.dataset}: needs train and test splits")
        splits_for_seed = lambda seed: fixed  # noqa: E731
    train_cfg = cfg.train
    summary = {"config": cfg.to_dict()}
    rows = compare(train_cfg, exp, splits_for_seed)
    for c in rows:
        for arm in (c.sft, c.cc):
            tag = f"{arm.name}_seed{c.seed}"
            write_metrics(out / f"metrics_{tag}.jsonl", arm.result.metrics)
            save_checkpoint(out / f"checkpoint_{tag}.json", arm.result)
            (out / f"report_{tag}.json").write_text(arm.test.to_json() + "\n", encoding="utf-8")
    (out / "deltas.txt").write_text(format_deltas([c.delta for c in rows]), encoding="utf-8")
    med = lambda xs: float(np.median(xs))  # noqa: E731
    summary["median_task_f1"] = {"sft": med([c.sft.test.task_f1 for c in rows]),
                                 "cc": med([c.cc.test.task_f1 for c in rows])}
    if exp.probe and rows and rows[0].cc.probe_f1 is not None:
        summary["median_probe_f1"] = {"sft": med([c.sft.probe_f1 for c in rows]),
                                      "cc": med([c.cc.probe_f1 for c in rows])}
    if args.concept_sweep:
        points = concept_sweep(train_cfg, exp, splits_for_seed)
        with (out / "sweep.jsonl").open("w", encoding="utf-8") as fh:
            for p in points:
                fh.write(json.dumps({"k": p.k, "seed": p.seed, "concepts": list(p.concepts),
                                     "task_f1": p.task_f1, "probe_f1": p.probe_f1}, sort_keys=True) + "\n")
        task, probe = sweep_medians(points)
        summary["sweep"] = {"median_task_f1": task, "median_probe_f1": probe,
                            "task_non_decreasing": non_decreasing(task),
                            "probe_non_decreasing": non_decreasing(probe)}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    outputs = sorted(p for p in out.iterdir() if p.name != "manifest.json")
    write_manifest(out / "manifest.json", "experiment", cfg.to_dict(), inputs, outputs)
    print(json.dumps({k: v for k, v in summary.items() if k != "config"}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config field (repeatable)")
    p = _Parser(prog="codeconcepts", description="Concept-supervised code reasoning experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("extract", parents=[common], help="label C sources with statement concepts")
    s.add_argument("source_dir")
    s.add_argument("--out", required=True)
    s.add_argument("--concept-set", default="vd-vulnerable", choices=sorted(CANONICAL_NAMES))
    s.add_argument("--traces", help="trace file (bp-abstract only)")
    s.add_argument("--labels", help="JSON lines {function_id, end_label} for VD end labels")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", parents=[common], help="synthesize a labelled corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--task", choices=("vd", "bp"), default="vd")
    s.add_argument("--n", type=int, default=2000, help="functions (vd) or programs (bp)")
    s.add_argument("--rate", type=float, default=0.1, help="vulnerable fraction (vd)")
    s.add_argument("--inputs", type=int, default=4, help="inputs per program (bp)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--probe-out", help="also write an independent probe-split draw here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", parents=[common], help="assign train/val/test (and probe) splits")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--ratios", default="0.8,0.1,0.1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--probe-fraction", type=float, default=0.0,
                   help="carve this fraction of function ids into the probe split first")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("perturb", parents=[common], help="rename identifiers / insert dead code")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("identity", "rename", "deadcode", "both"), default="both")
    s.add_argument("--split", default="test", help="split to perturb ('' for all records)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1, help="dead-code blocks per function")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("train", parents=[common], help="train one model")
    s.add_argument("dataset")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--metrics", help="metric log path")
    s.add_argument("--concepts", help="comma-separated concept indices to supervise")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("probe", parents=[common], help="fit and score a linear concept probe")
    s.add_argument("checkpoint")
    s.add_argument("probe_dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--layer", type=int, default=-1, help="encoder layer (0 = embeddings, -1 = final)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint, optionally on perturbed data")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--perturb", choices=("identity", "rename", "deadcode", "both"))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", parents=[common], help="SFT vs concept-supervised comparison")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--dataset", help="split dataset to use instead of synthesizing per seed")
    s.add_argument("--probe-dataset", help="probe-split dataset (with --dataset)")
    s.add_argument("--concept-sweep", action="store_true", help="also run the k=1..N concept-count sweep")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.set)
    except UsageError as exc:
        _say(f"codeconcepts: error: {exc}")
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        _say(f"codeconcepts: config error: {exc}")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        # divergence is detected explicitly (NonFiniteLoss), so numpy's own warnings are noise here
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args, cfg)
    except UsageError as exc:
        _say(f"codeconcepts: error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _say(f"codeconcepts: numeric failure: {exc}")
        return EXIT_NUMERIC
    except DataError as exc:
        _say(f"codeconcepts: data error: {exc}")
        return EXIT_DATA
    except (OSError, UnicodeDecodeError) as exc:
        _say(f"codeconcepts: data error: {exc}")
        return EXIT_DATA
    except ValueError as exc:
        _say(f"codeconcepts: invalid value: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
