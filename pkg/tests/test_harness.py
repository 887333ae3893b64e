"""Experiment grid runner: spec validation, determinism, report layout."""

import json

import numpy as np
import pytest

import camdepth.harness as harness
from camdepth.harness import (
    ExperimentSpec,
    OrderingSpec,
    RunReport,
    VariantSpec,
    assert_orderings,
    generalization_experiment_spec,
    load_report,
    overfitting_experiment_spec,
    required_orderings_pass,
    run_experiment,
    write_report,
)
from camdepth.losses import METRIC_FIELDS
from camdepth.synth import CameraRule, DatasetSpec


def tiny_dataset(name, start, cameras=None, n_scenes=2, views=1):
    return DatasetSpec(
        name=name,
        cameras=cameras or (CameraRule("s1", "f64"),),
        scene_seed_start=start,
        n_scenes=n_scenes,
        views_per_scene=views,
        scale=0.25,
    )


def tiny_spec(**kw):
    defaults = dict(
        name="tiny",
        train_sets=(tiny_dataset("tr", 0),),
        test_sets=(tiny_dataset("te", 100),),
        variants=(VariantSpec("m", "tr"),),
        seeds=(0,),
        levels=2,
        base_channels=2,
        iterations=4,
        f_n=25.0,
    )
    defaults.update(kw)
    return ExperimentSpec(**defaults)


# ------------------------------------------------------------ validation


def test_spec_requires_seeds():
    with pytest.raises(ValueError):
        tiny_spec(seeds=())
    with pytest.raises(ValueError):
        tiny_spec(seeds=(0, 0))


def test_spec_rejects_duplicate_dataset_names():
    with pytest.raises(ValueError):
        tiny_spec(test_sets=(tiny_dataset("tr", 100),))


def test_spec_rejects_unknown_train_set():
    with pytest.raises(ValueError):
        tiny_spec(variants=(VariantSpec("m", "nope"),))


def test_spec_rejects_unknown_ordering_refs():
    with pytest.raises(ValueError):
        tiny_spec(orderings=(OrderingSpec("o", ("ghost", "te"), ("m", "te")),))
    with pytest.raises(ValueError):
        tiny_spec(orderings=(OrderingSpec("o", ("m", "ghost"), ("m", "te")),))


def test_spec_rejects_overlapping_scene_ranges():
    # train scenes [0, 2), test scenes [1, 3): a model would be evaluated
    # on content it saw in training
    with pytest.raises(ValueError):
        tiny_spec(test_sets=(tiny_dataset("te", 1),))


def test_spec_json_roundtrip():
    for spec in (overfitting_experiment_spec(), generalization_experiment_spec()):
        again = ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec


# ------------------------------------------------------------ orderings


def fake_report(spec, values):
    """values[(variant, test)] = (sc_inv, rmse); other metrics zero-filled."""
    cells = {}
    aggregates = {}
    for v in spec.variants:
        cells[v.name] = {}
        aggregates[v.name] = {}
        for t in spec.test_sets:
            sc, rm = values[(v.name, t.name)]
            metrics = {k: 0.0 for k in METRIC_FIELDS}
            metrics["sc_inv"] = sc
            metrics["rmse"] = rm
            cells[v.name][t.name] = {"seeds": {"0": metrics}}
            aggregates[v.name][t.name] = {
                "median": dict(metrics), "mean": dict(metrics), "n_seeds": 1,
            }
    return RunReport(spec=spec.to_dict(), cells=cells, aggregates=aggregates)


def two_variant_spec(orderings=()):
    return tiny_spec(
        variants=(VariantSpec("a", "tr"), VariantSpec("b", "tr")),
        orderings=orderings,
    )


def test_ordering_requires_both_metrics_strictly_lower():
    spec = two_variant_spec(
        orderings=(OrderingSpec("o", worse=("a", "te"), better=("b", "te")),)
    )
    wins = fake_report(spec, {("a", "te"): (2.0, 2.0), ("b", "te"): (1.0, 1.0)})
    assert assert_orderings(spec, wins)[0]["passed"]

    split = fake_report(spec, {("a", "te"): (2.0, 1.0), ("b", "te"): (1.0, 2.0)})
    assert not assert_orderings(spec, split)[0]["passed"]

    tie = fake_report(spec, {("a", "te"): (1.0, 1.0), ("b", "te"): (1.0, 0.5)})
    assert not assert_orderings(spec, tie)[0]["passed"]


def test_ordering_self_comparison_is_vacuous_pass():
    spec = tiny_spec(orderings=(OrderingSpec("self", ("m", "te"), ("m", "te")),))
    report = fake_report(spec, {("m", "te"): (1.0, 1.0)})
    outcome = assert_orderings(spec, report)[0]
    assert outcome["passed"]
    assert "tie" in outcome["reason"]


def test_ordering_fails_when_cell_has_no_seeds():
    spec = two_variant_spec(
        orderings=(OrderingSpec("o", worse=("a", "te"), better=("b", "te")),)
    )
    report = fake_report(spec, {("a", "te"): (2.0, 2.0), ("b", "te"): (1.0, 1.0)})
    report.aggregates["b"]["te"] = {"median": None, "mean": None, "n_seeds": 0}
    outcome = assert_orderings(spec, report)[0]
    assert not outcome["passed"]
    assert "diverged" in outcome["reason"]


def test_required_orderings_pass_ignores_reported_only():
    spec = two_variant_spec(orderings=(
        OrderingSpec("gate", worse=("a", "te"), better=("b", "te")),
        OrderingSpec("info", worse=("b", "te"), better=("a", "te"), required=False),
    ))
    report = fake_report(spec, {("a", "te"): (2.0, 2.0), ("b", "te"): (1.0, 1.0)})
    report.orderings = assert_orderings(spec, report)
    assert [o["passed"] for o in report.orderings] == [True, False]
    assert required_orderings_pass(report)


# ------------------------------------------------------------ end to end


def test_run_experiment_grid_complete(tmp_path):
    spec = tiny_spec(
        variants=(VariantSpec("a", "tr"), VariantSpec("b", "tr", camconvs=True)),
        seeds=(0, 1),
    )
    report = run_experiment(spec, tmp_path / "run")
    for v in ("a", "b"):
        for t in ("te",):
            seeds = report.cells[v][t]["seeds"]
            assert sorted(seeds) == ["0", "1"]
            for metrics in seeds.values():
                assert set(METRIC_FIELDS) <= set(metrics)
            agg = report.aggregates[v][t]
            assert agg["n_seeds"] == 2
            for k in METRIC_FIELDS:
                lo, hi = sorted(seeds[s][k] for s in ("0", "1"))
                assert lo <= agg["median"][k] <= hi
                assert np.isclose(agg["mean"][k], (lo + hi) / 2.0)
    assert (tmp_path / "run" / "report.json").exists()
    assert (tmp_path / "run" / "report.csv").exists()


def test_run_experiment_byte_deterministic(tmp_path):
    spec = tiny_spec(seeds=(0,), iterations=3)
    run_experiment(spec, tmp_path / "one")
    run_experiment(spec, tmp_path / "two")
    one_json = (tmp_path / "one" / "report.json").read_bytes()
    two_json = (tmp_path / "two" / "report.json").read_bytes()
    assert one_json == two_json
    one_csv = (tmp_path / "one" / "report.csv").read_bytes()
    two_csv = (tmp_path / "two" / "report.csv").read_bytes()
    assert one_csv == two_csv
    assert b"\r\n" in one_csv


def test_run_experiment_records_divergence(tmp_path, monkeypatch):
    spec = tiny_spec(
        variants=(VariantSpec("ok", "tr"), VariantSpec("bad", "tr")),
        orderings=(OrderingSpec("o", worse=("bad", "te"), better=("ok", "te")),),
    )
    real_train = harness.train
    calls = []

    def maybe_diverge(train_cfg, net_cfg, samples=None):
        calls.append(net_cfg)
        if len(calls) == 2:  # second variant
            raise RuntimeError("training diverged at step 0: loss=nan")
        return real_train(train_cfg, net_cfg, samples=samples)

    monkeypatch.setattr(harness, "train", maybe_diverge)
    report = run_experiment(spec, tmp_path / "run")
    cell = report.cells["bad"]["te"]["seeds"]["0"]
    assert "diverged" in cell
    assert report.aggregates["bad"]["te"]["n_seeds"] == 0
    assert report.aggregates["ok"]["te"]["n_seeds"] == 1
    outcome = report.orderings[0]
    assert not outcome["passed"]
    assert not required_orderings_pass(report)


def test_report_roundtrip_and_csv_layout(tmp_path):
    spec = tiny_spec(seeds=(0,))
    report = run_experiment(spec, tmp_path / "run")
    again = load_report(tmp_path / "run")
    assert again.to_dict() == report.to_dict()

    lines = (tmp_path / "run" / "report.csv").read_bytes().decode().split("\r\n")
    header = lines[0].split(",")
    assert header[:4] == ["variant", "train_set", "test_set", "n_seeds"]
    assert header[4:4 + len(METRIC_FIELDS)] == [f"median_{m}" for m in METRIC_FIELDS]
    row = lines[1].split(",")
    assert row[:3] == ["m", "tr", "te"]
    # floats are exact reprs, so parsing them back loses nothing
    assert float(row[4]) == report.aggregates["m"]["te"]["median"][METRIC_FIELDS[0]]


def test_canonical_specs_validate():
    over = overfitting_experiment_spec()
    gen = generalization_experiment_spec()
    assert len(over.variants) == 4
    assert len(over.orderings) == 2
    assert all(o.required for o in over.orderings)
    assert len(gen.variants) == 3
    required = [o for o in gen.orderings if o.required]
    assert len(required) == 2
    # desk-scale normalization focal follows the sensor scale
    assert over.f_n == pytest.approx(25.0)
    # every gated ordering in the canonical specs compares distinct cells
    for spec in (over, gen):
        for o in spec.orderings:
            assert o.worse != o.better


def test_five_row_single_test_table_layout(tmp_path):
    # one test column, five model rows: three single-focal baselines, the
    # two-focal mix, and its focal-norm twin
    train_sets = (
        tiny_dataset("tr-f64", 0),
        tiny_dataset("tr-f72", 0, cameras=(CameraRule("s1", "f72"),)),
        tiny_dataset("tr-f128", 0, cameras=(CameraRule("s1", "f128"),)),
        tiny_dataset("tr-mix", 0, cameras=(CameraRule("s1", "f72"),
                                           CameraRule("s1", "f128"))),
    )
    variants = (
        VariantSpec("f64", "tr-f64"),
        VariantSpec("f72", "tr-f72"),
        VariantSpec("f128", "tr-f128"),
        VariantSpec("mix", "tr-mix"),
        VariantSpec("mix-norm", "tr-mix", focal_norm=True),
    )
    spec = tiny_spec(train_sets=train_sets, variants=variants)
    report = fake_report(spec, {(v.name, "te"): (1.0, 1.0) for v in variants})
    write_report(report, tmp_path)
    lines = (tmp_path / "report.csv").read_bytes().decode().strip().split("\r\n")
    assert len(lines) == 1 + 5
    assert [ln.split(",")[0] for ln in lines[1:]] == [v.name for v in variants]


def test_write_report_tolerates_missing_aggregate(tmp_path):
    spec = tiny_spec()
    report = fake_report(spec, {("m", "te"): (1.0, 1.0)})
    report.aggregates["m"]["te"] = {"median": None, "mean": None, "n_seeds": 0}
    write_report(report, tmp_path)
    lines = (tmp_path / "report.csv").read_bytes().decode().split("\r\n")
    assert lines[1].split(",")[3] == "0"
