import numpy as np
import pytest

from codeconcepts.concepts import concept_set, restrict_concepts
from codeconcepts.config import ExperimentConfig, RunConfig, load_config
from codeconcepts.experiment import (
    SweepPoint, compare, concept_sweep, non_decreasing, project_records, sweep_medians, sweep_order,
    synthetic_splits,
)
from codeconcepts.manifest import sha256_file, write_manifest
from codeconcepts.train import TrainConfig

VD = concept_set("vd-vulnerable")
TINY = TrainConfig(d=8, epochs=2, warmup_epochs=1)


def test_load_config_defaults_and_overrides(tmp_path):
    assert load_config() == RunConfig()
    path = tmp_path / "c.ini"
    path.write_text("[train]\nlambda1 = 2.5\nconcat = yes\n[experiment]\nseeds = 3, 4\n")
    cfg = load_config(path, ["experiment.n=50", "train.lambda1=0.5"])
    assert cfg.train.lambda1 == 0.5 and cfg.train.concat is True
    assert cfg.experiment.seeds == (3, 4) and cfg.experiment.n == 50
    assert cfg.to_dict()["experiment"]["seeds"] == [3, 4]


@pytest.mark.parametrize("overrides", [["train.nope=1"], ["other.n=1"], ["n=1"], ["train.concat=maybe"],
                                       ["train.epochs=two"]])
def test_load_config_errors(overrides):
    with pytest.raises(ValueError):
        load_config(None, overrides)


def test_unknown_section(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[model]\nd = 3\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_synthetic_splits_disjoint_probe():
    s = synthetic_splits(0, 200)
    assert (len(s.train), len(s.val), len(s.test), len(s.probe)) == (160, 20, 20, 200)
    used = {r.function_id for r in s.train + s.val + s.test}
    assert not used & {r.function_id for r in s.probe}
    assert not {r.source_text for r in s.train} >= {r.source_text for r in s.probe}


def test_project_records():
    s = synthetic_splits(0, 20)
    sub = restrict_concepts(VD, [0, 6])
    out = project_records(s.train, VD, sub)
    for a, b in zip(s.train, out):
        assert [v.bits for v in b.concepts] == [(v.bits[0], v.bits[6]) for v in a.concepts]
    with pytest.raises(ValueError):
        project_records(s.train, VD, concept_set("vd-nonvulnerable"))


def test_sweep_order_is_a_fixed_permutation():
    assert sorted(sweep_order(0)) == list(range(7))
    assert sweep_order(0) == sweep_order(0) == [2, 4, 3, 6, 5, 0, 1]


def test_sweep_medians_and_monotonicity():
    pts = [SweepPoint(k, (), s, f, p) for k, s, f, p in
           [(1, 0, 0.1, 0.5), (1, 1, 0.3, 0.6), (1, 2, 0.2, 0.7), (2, 0, 0.4, 0.9), (2, 1, 0.2, 0.8), (2, 2, 0.5, 0.4)]]
    task, probe = sweep_medians(pts)
    assert task == [0.2, 0.4] and probe == [0.6, 0.8]
    assert non_decreasing([0.1, 0.1, 0.3]) and not non_decreasing([0.2, 0.1])


def test_compare_shares_data_and_seeds():
    exp = ExperimentConfig(seeds=(0,), n=120, probe=True)
    (c,) = compare(TINY, exp)
    assert c.sft.result.config.lambda1 == 0.0 and c.cc.result.config.lambda1 == exp.cc_lambda1
    assert c.sft.result.trained_function_ids == c.cc.result.trained_function_ids
    assert c.delta.delta_v == pytest.approx(c.cc.test.task_f1 - c.sft.test.task_f1)
    assert c.delta.delta_c == pytest.approx(c.cc.probe_f1 - c.sft.probe_f1)


def test_compare_identical_objectives_zero_delta():
    exp = ExperimentConfig(seeds=(0,), n=120, cc_lambda1=0.0, probe=False)
    (c,) = compare(TINY, exp)
    assert c.delta.delta_v == 0.0 and c.delta.delta_c == 0.0


def test_concept_sweep_structure():
    exp = ExperimentConfig(sweep_seeds=(0,), sweep_n=120, probe=False)
    pts = concept_sweep(TINY, exp)
    order = sweep_order(0)
    assert [p.k for p in pts] == list(range(1, 8))
    for p in pts:
        assert set(p.concepts) == {VD.concept_names[i] for i in order[: p.k]}


def test_manifest_checksums(tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("hello")
    sub = tmp_path / "d"
    sub.mkdir()
    (sub / "b.txt").write_text("x")
    m = write_manifest(tmp_path / "m.json", "demo", {"seed": 1}, [a], [sub])
    assert m.inputs == {str(a): sha256_file(a)}
    assert list(m.outputs) == [str(sub / "b.txt")]
    assert m.concept_set_version == 1 and m.timestamp.endswith("+00:00")
