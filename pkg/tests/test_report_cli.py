import csv
import json
from pathlib import Path

import pytest
import yaml

from faithgen.cli import main
from faithgen.config import ConfigError, config_from_dict, load_config
from faithgen.evaluation.judge import FixtureJudge
from faithgen.evaluation.report import (AGGREGATE_COLUMNS, EvalItem, ReportSchemaError, aggregate, compare_runs,
                                        evaluate_corpus, load_report, write_report)
from faithgen.kg_data import write_dataset
from faithgen.synthetic import SALIENT_RELATIONS, fixture_table, make_fact_fixture, make_house_corpus

TINY = {
    "model": {"embed_dim": 16, "hidden_dim": 16, "ffn_dim": 32, "num_layers": 1, "num_heads": 2,
              "max_target_len": 96},
    "train": {"epochs": 1, "learning_rate": 1e-3, "batch_size": 16},
    "judge": {"n_samples": 4},
}


@pytest.fixture
def dataset(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    for k, (split, n) in enumerate((("train", 30), ("valid", 6), ("test", 6))):
        write_dataset(make_house_corpus(n, seed=k, split=split, id_prefix=split), d / f"{split}.jsonl")
    cfg = {"data": {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl"}, **TINY}
    (d / "config.yaml").write_text(yaml.safe_dump(cfg))
    return d


def _fixture_report(n=50):
    fixtures = make_fact_fixture(n)
    items = [EvalItem(fx.id, fx.graph, fx.output, fx.output) for fx in fixtures]
    rows, agg, transcript = evaluate_corpus(items, FixtureJudge(fixture_table(fixtures)), SALIENT_RELATIONS,
                                            n_judged=n)
    return fixtures, rows, agg, transcript


def test_report_files_and_recompute(tmp_path):
    _, rows, agg, transcript = _fixture_report(20)
    write_report(tmp_path / "eval", rows, agg, transcript)
    per = json.loads((tmp_path / "eval" / "per_sample.json").read_text())
    with (tmp_path / "eval" / "per_sample.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 20
    live = [r for r in per if not r["degenerate"]]
    assert agg["avg_precision"] == pytest.approx(sum(r["precision"] for r in live) / len(live), abs=1e-12)
    assert agg["avg_recall"] == pytest.approx(sum(r["recall"] for r in per) / len(per), abs=1e-12)
    assert set(AGGREGATE_COLUMNS) <= set(agg)
    assert agg["meteor"] is None and agg["factcc"] is None


def test_compare_runs_rows_and_recompute(tmp_path):
    _, rows, agg, tr = _fixture_report(12)
    write_report(tmp_path / "r1", rows, agg, tr)
    csv1, png = compare_runs({"r1": tmp_path / "r1"}, tmp_path / "cmp1")
    table = list(csv.DictReader(csv1.open()))
    assert len(table) == 1 and png.exists()
    per = json.loads((tmp_path / "r1" / "per_sample.json").read_text())
    again = aggregate(per)
    for key in ("avg_precision", "avg_recall", "avg_hallucination", "avg_salient_recall"):
        assert float(table[0][key]) == pytest.approx(again[key], abs=1e-12)

    _, rows2, agg2, tr2 = _fixture_report(8)
    write_report(tmp_path / "r2", rows2, agg2, tr2)
    csv2, _ = compare_runs({"r1": tmp_path / "r1", "r2": tmp_path / "r2"}, tmp_path / "cmp2")
    with csv2.open() as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == ["run"] + AGGREGATE_COLUMNS
        assert [r["run"] for r in reader] == ["r1", "r2"]


def test_incompatible_schema(tmp_path):
    _, rows, agg, tr = _fixture_report(3)
    write_report(tmp_path / "r", rows, {k: v for k, v in agg.items() if k != "bleu"}, tr)
    with pytest.raises(ReportSchemaError):
        load_report(tmp_path / "r")


# -- config -------------------------------------------------------------------

def test_config_defaults():
    cfg = config_from_dict({})
    assert (cfg.train.batch_size, cfg.train.learning_rate) == (32, 3e-5)
    assert (cfg.model.max_source_len, cfg.model.max_target_len) == (600, 128)
    assert (cfg.sampler.positives, cfg.sampler.negatives) == (2, 4)


@pytest.mark.parametrize("bad", [{"nope": 1}, {"train": {"ablation": "both"}}, {"scorer": {"buckets": 4}},
                                 {"judge": {"kind": "remote"}}, {"model": {"layers": 2}}])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_config_paths_relative_to_file(dataset):
    cfg = load_config(dataset / "config.yaml")
    assert Path(cfg.data.train) == (dataset / "train.jsonl").resolve()


# -- CLI ----------------------------------------------------------------------

def _run(*args):
    return main([str(a) for a in args])


def test_cli_end_to_end_and_idempotent(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    cfg = dataset / "config.yaml"
    for stage in ("prepare", "contrast", "bucket", "train", "generate", "evaluate"):
        assert _run(stage, "--config", cfg, "--out", out) == 0
    assert (out / "eval" / "aggregate.json").exists()
    stats = json.loads((out / "stats.json").read_text())
    assert stats["counts"] == {"train": 30, "valid": 6, "test": 6}

    manifest = json.loads((out / "manifest.json").read_text())
    before = {p.name: p.stat().st_mtime_ns for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    capsys.readouterr()
    for stage in ("prepare", "contrast", "bucket", "train", "generate", "evaluate"):
        assert _run(stage, "--config", cfg, "--out", out) == 0
    assert capsys.readouterr().out.count("up to date") == 6
    after = json.loads((out / "manifest.json").read_text())
    assert after["stages"] == manifest["stages"]
    for p in out.rglob("*"):
        if p.is_file() and p.name not in ("manifest.json", "config.yaml"):
            assert p.stat().st_mtime_ns == before[p.name]

    # every file in the run directory is reachable from the manifest
    listed = {"manifest.json", after["config"]}
    for entry in after["stages"].values():
        listed |= {o["path"] for o in entry["outputs"].values()}
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()}
    assert on_disk <= listed

    # report over the finished run
    assert _run("report", out, "--out", tmp_path / "cmp") == 0
    assert (tmp_path / "cmp" / "prh.png").exists()


def test_cli_changed_config_reruns_stage(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    cfg = dataset / "config.yaml"
    assert _run("all", "--config", cfg, "--out", out) == 0
    capsys.readouterr()
    assert _run("generate", "--config", cfg, "--out", out, "--tag", "hal_high") == 0
    assert "generate: done" in capsys.readouterr().out
    gens = [json.loads(l) for l in (out / "generations.jsonl").read_text().splitlines()]
    assert {g["tag"] for g in gens} == {"Hal_high"}


def test_cli_control_only_logs_zero_cl(dataset, tmp_path):
    out = tmp_path / "run"
    cfg = dataset / "config.yaml"
    assert _run("prepare", "--config", cfg, "--out", out) == 0
    assert _run("bucket", "--config", cfg, "--out", out) == 0
    assert _run("train", "--config", cfg, "--out", out, "--ablation", "control-only") == 0
    rows = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert rows and all(r["l_cl"] == 0.0 and r["total"] == r["l_ce"] for r in rows)


def test_cli_exit_codes(dataset, tmp_path, capsys):
    cfg = dataset / "config.yaml"
    assert _run("train", "--config", cfg, "--out", tmp_path / "r1") == 4
    assert "prepare" in capsys.readouterr().err

    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {ablation: sideways}\n")
    assert _run("prepare", "--config", bad, "--out", tmp_path / "r2") == 2
    assert _run("prepare", "--config", tmp_path / "missing.yaml", "--out", tmp_path / "r2") == 2

    corrupt = tmp_path / "corrupt"
    corrupt.mkdir()
    lines = (dataset / "train.jsonl").read_text().splitlines()[:4]
    lines.insert(2, '{"id": "zz", "text": "no triples"}')
    (corrupt / "train.jsonl").write_text("\n".join(lines) + "\n")
    (corrupt / "c.yaml").write_text("data: {train: train.jsonl}\n")
    capsys.readouterr()
    assert _run("prepare", "--config", corrupt / "c.yaml", "--out", tmp_path / "r3") == 3
    assert "train.jsonl:3" in capsys.readouterr().err

    assert _run("report", tmp_path / "r1", "--out", tmp_path / "cmp") == 4


def test_identical_config_identical_artifacts(dataset, tmp_path):
    cfg = dataset / "config.yaml"
    for name in ("a", "b"):
        for stage in ("prepare", "contrast", "bucket", "train", "generate"):
            assert _run(stage, "--config", cfg, "--out", tmp_path / name) == 0
    for f in ("buckets.jsonl", "contrastive.jsonl", "generations.jsonl", "vocab.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
