import csv
import json

import jsonschema
import numpy as np
import pytest

from mhkt.cli import main
from mhkt.experiments import ABLATION_ROWS, ExperimentGrid, RunCapExceeded, parse_sweep_values, sweep_tables
from mhkt.schemas import (
    ABLATION_COLUMNS,
    CONFIG_SCHEMA,
    EVAL_SCHEMA,
    LABELS_COLUMNS,
    MANIFEST_SCHEMA,
    METRICS_RECORD_SCHEMA,
    SC_RECORD_SCHEMA,
    SWEEP_LONG_COLUMNS,
)

FAST = ["--epochs", "1", "--steps-per-epoch", "1", "--batch-size", "6", "--labeled-per-class", "2"]


def rows(path):
    with open(path) as fh:
        return list(csv.reader(ln for ln in fh if not ln.startswith("#")))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    code = main(["gen-data", "--out", str(d), "--classes", "3", "--source-per-class", "4", "--target-per-class", "3",
                 "--test-per-class", "2", "--seed", "1"])
    assert code == 0
    return d


@pytest.fixture(scope="module")
def run_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--lambda1", "1.0", "--lambda2", "2.0", "--alpha", "0.06", *FAST]) == 0
    return out


class TestGenData:
    def test_manifest_and_schemas(self, dataset):
        m = json.loads((dataset / "manifest.json").read_text())
        jsonschema.validate(m, MANIFEST_SCHEMA)
        assert m["counts"]["source"] == [4, 4, 4] and m["counts"]["target"] == [3, 3, 3]
        for line in (dataset / "source" / "scs.jsonl").read_text().splitlines():
            jsonschema.validate(json.loads(line), SC_RECORD_SCHEMA)
        assert rows(dataset / "target" / "labels.csv")[0] == LABELS_COLUMNS

    def test_rerun_identical(self, dataset, tmp_path):
        args = ["gen-data", "--out", str(tmp_path / "again"), "--classes", "3", "--source-per-class", "4",
                "--target-per-class", "3", "--test-per-class", "2", "--seed", "1"]
        assert main(args) == 0
        for rel in ("manifest.json", "source/scs.jsonl", "target/images.f32", "test/images.f32"):
            assert (tmp_path / "again" / rel).read_bytes() == (dataset / rel).read_bytes()

    def test_one_class_is_usage_error(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "x"), "--classes", "1"]) == 2

    def test_refuses_overwrite(self, dataset):
        assert main(["gen-data", "--out", str(dataset), "--classes", "3"]) == 2


class TestTrainEval:
    def test_run_directory(self, run_dir):
        cfg = json.loads((run_dir / "config.json").read_text())
        jsonschema.validate(cfg, CONFIG_SCHEMA)
        assert cfg["weights"]["lambda1"] == 1.0 and cfg["weights"]["lambda2"] == 2.0 and cfg["weights"]["alpha"] == 0.06
        for line in (run_dir / "metrics.jsonl").read_text().splitlines():
            jsonschema.validate(json.loads(line), METRICS_RECORD_SCHEMA)
        jsonschema.validate(json.loads((run_dir / "eval.json").read_text()), EVAL_SCHEMA)
        conf = rows(run_dir / "confusion.csv")
        assert len(conf) == 4
        assert (run_dir / "checkpoint.bin").read_bytes()[:8] == b"MHKTCKPT"

    def test_target_only_breakdown(self, dataset, tmp_path):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), "--variant", "target_only", *FAST]) == 0
        rec = json.loads((tmp_path / "t" / "metrics.jsonl").read_text().splitlines()[0])
        assert set(rec["loss"]) == {"total", "target_ce"}

    def test_toggles(self, dataset, tmp_path):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), "--toggles", "tgkt", *FAST]) == 0
        rec = json.loads((tmp_path / "t" / "metrics.jsonl").read_text().splitlines()[0])
        assert set(rec["loss"]) == {"total", "source_ce", "mdd", "target_ce"}

    def test_bad_toggle(self, dataset, tmp_path):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), "--toggles", "foo", *FAST]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "t"), *FAST]) == 2

    def test_refuses_overwrite_then_force(self, dataset, tmp_path):
        out = tmp_path / "t"
        assert main(["train", "--data", str(dataset), "--out", str(out), *FAST]) == 0
        before = (out / "config.json").read_text()
        assert main(["train", "--data", str(dataset), "--out", str(out), *FAST]) == 2
        assert (out / "config.json").read_text() == before
        assert main(["train", "--data", str(dataset), "--out", str(out), "--force", *FAST]) == 0

    def test_eval(self, run_dir, capsys):
        assert main(["eval", "--run", str(run_dir)]) == 0
        ev = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert ev == json.loads((run_dir / "eval.json").read_text())

    def test_eval_malformed_run(self, tmp_path):
        (tmp_path / "r").mkdir()
        assert main(["eval", "--run", str(tmp_path / "r")]) == 2
        (tmp_path / "r" / "checkpoint.bin").write_bytes(b"garbage")
        assert main(["eval", "--run", str(tmp_path / "r")]) == 2

    def test_runtime_failure_exit_code(self, dataset, tmp_path):
        # more labels requested than the split holds: fails inside training, after validation
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), *FAST[:-1], "50"]) == 3

    def test_bad_flag(self):
        assert main(["train", "--no-such-flag"]) == 2


class TestEmbed:
    def test_schema_and_counts(self, run_dir, tmp_path):
        assert main(["embed", "--run", str(run_dir), "--out", str(tmp_path / "e.csv")]) == 0
        table = rows(tmp_path / "e.csv")
        assert table[0][:2] == ["domain", "label"] and len(table[0]) == 2 + 128
        body = table[1:]
        assert len(body) == 12 + 9
        assert {r[0] for r in body} == {"source", "target"}
        assert {r[1] for r in body} == {"0", "1", "2"}

    def test_tsne_deterministic(self, run_dir, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert main(["embed", "--run", str(run_dir), "--out", str(tmp_path / name), "--tsne", "--perplexity", "5", "--tsne-seed", "3"]) == 0
        a, b = (tmp_path / "a.csv").read_text(), (tmp_path / "b.csv").read_text()
        assert a == b
        assert a.startswith("# tsne perplexity=5.0 seed=3")
        assert rows(tmp_path / "a.csv")[0][-2:] == ["tsne_x", "tsne_y"]
        assert main(["plot", "--csv", str(tmp_path / "a.csv"), "--out", str(tmp_path / "a.png")]) == 0
        assert (tmp_path / "a.png").read_bytes()[:4] == b"\x89PNG"

    def test_missing_checkpoint(self, tmp_path):
        assert main(["embed", "--run", str(tmp_path), "--out", str(tmp_path / "e.csv")]) == 2


class TestGrids:
    def test_ablate(self, dataset, tmp_path):
        out = tmp_path / "abl"
        assert main(["ablate", "--data", str(dataset), "--out", str(out), "--seeds", "0", "--with-target-only", *FAST]) == 0
        table = rows(out / "ablation.csv")
        assert table[0] == ABLATION_COLUMNS
        assert [r[0] for r in table[1:]] == ["target_only"] + [n for n, _ in ABLATION_ROWS]
        assert table[-1][1:4] == ["1", "1", "1"]
        assert len(list((out / "runs").iterdir())) == 8
        assert main(["plot", "--csv", str(out / "ablation.csv"), "--out", str(tmp_path / "a.png")]) == 0

    def test_sweep_labeled(self, dataset, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--data", str(dataset), "--out", str(out), "--axis", "labeled_per_class", "--values", "1,2,3,ALL",
                     "--seeds", "0", *FAST]) == 0
        wide = rows(out / "sweep.csv")
        assert wide[0][1:] == ["1", "2", "3", "ALL"]
        assert [r[0] for r in wide[1:]] == ["0", "mean"]
        long = rows(out / "sweep_long.csv")
        assert long[0] == SWEEP_LONG_COLUMNS and len(long) == 5
        assert main(["plot", "--csv", str(out / "sweep.csv"), "--out", str(tmp_path / "s.png")]) == 0

    def test_sweep_alpha_rows_per_seed(self, dataset, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--data", str(dataset), "--out", str(out), "--axis", "alpha", "--values", "0.06,0.6,0.9",
                     "--seeds", "0,1", *FAST]) == 0
        long = rows(out / "sweep_long.csv")[1:]
        assert sorted(r[2] for r in long) == ["0", "0", "0", "1", "1", "1"]
        cfg = json.loads((out / "runs" / "0.6" / "seed1" / "config.json").read_text())
        assert cfg["weights"]["alpha"] == 0.6 and cfg["seed"] == 1

    @pytest.mark.parametrize("extra", [["--axis", "alpha", "--values", ""], ["--axis", "gamma", "--values", "1"],
                                       ["--axis", "alpha", "--values", "1.5"]])
    def test_sweep_usage_errors(self, dataset, tmp_path, extra):
        assert main(["sweep", "--data", str(dataset), "--out", str(tmp_path / "x"), *extra, *FAST]) == 2

    def test_run_cap(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("MHKT_RUN_CAP", "6")
        assert main(["ablate", "--data", str(dataset), "--out", str(tmp_path / "x"), "--seeds", "0", *FAST]) == 2
        assert not (tmp_path / "x").exists()


class TestExperimentGrid:
    def test_size_and_distinct_dirs(self):
        g = ExperimentGrid(["lambda2", "alpha"], [[0.5, 1.0], [0.06, 0.6, 0.9]], [0, 1, 2])
        assert g.n_runs == 18
        runs = list(g.runs())
        assert len({(label, s) for label, s, _ in runs}) == 18
        cfg = [c for label, s, c in runs if label == "1.0_0.9" and s == 2][0]
        assert (cfg.weights.lambda2, cfg.weights.alpha, cfg.seed) == (1.0, 0.9, 2)

    def test_default_cap(self, monkeypatch):
        monkeypatch.delenv("MHKT_RUN_CAP", raising=False)
        ExperimentGrid(["alpha"], [[0.1] * 40], list(range(5)))
        with pytest.raises(RunCapExceeded):
            ExperimentGrid(["alpha"], [[0.1] * 41], list(range(5)))

    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("MHKT_RUN_CAP", "500")
        assert ExperimentGrid(["alpha"], [[0.1] * 100], list(range(5))).n_runs == 500

    def test_parse_values(self):
        assert parse_sweep_values("labeled_per_class", "1,5,ALL") == ([1, 5, 0], ["1", "5", "ALL"])
        with pytest.raises(ValueError):
            parse_sweep_values("labeled_per_class", "0")

    def test_sweep_tables(self):
        recs = [{"cell": v, "seed": s, "accuracy": a} for (v, s, a) in [("a", 0, 0.5), ("b", 0, 0.7), ("a", 1, 0.7), ("b", 1, 0.9)]]
        long_csv, wide_csv = sweep_tables("alpha", ["a", "b"], recs)
        lines = wide_csv.splitlines()
        assert lines[-1] == "mean,0.600000,0.800000"
        assert len(long_csv.splitlines()) == 5
        assert np.isclose(float(lines[1].split(",")[1]), 0.5)
