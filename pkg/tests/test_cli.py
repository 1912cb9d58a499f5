import csv
import json

import pytest

from hybridnids.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from hybridnids.features import FeatureSchema

from conftest import run_cli_workflow


@pytest.fixture(scope="module")
def workflow(tmp_path_factory):
    return run_cli_workflow(tmp_path_factory.mktemp("cli"))


def test_outputs_and_manifests(workflow):
    for name, path in workflow.items():
        assert path.exists(), name
        manifest = json.loads(path.with_name(path.name + ".manifest.json").read_text())
        assert manifest["schema_version"] == FeatureSchema().version
        assert str(path) in manifest["outputs"]
        assert manifest["config"]["seed"] == 0
        assert set(manifest["seeds"]) >= {"balance", "forest", "vae-init"}


def test_model_metadata(workflow):
    f = json.loads(workflow["forest.json"].read_text())
    v = json.loads(workflow["vae.json"].read_text())
    assert f["schema_version"] == v["schema_version"] == FeatureSchema().version
    assert f["normalizer"] == v["normalizer"]
    assert len(f["trees"]) == 10
    loss = list(csv.reader(open(workflow["loss.csv"])))
    assert loss[0] == ["epoch", "mean_total_loss"] and len(loss) == 3


def test_novelty_manifest_records_omission(workflow):
    doc = json.loads(workflow["novelty.json"].read_text())
    assert doc["omitted"] == ["anomaly-spam"]
    assert "hybrid (restricted)" in doc["reports"]


def test_results_file(workflow):
    rows = list(csv.DictReader(open(workflow["results.csv"])))
    assert rows and set(rows[0]) == {"src_ip", "window_index", "filter_verdict", "anomaly_score",
                                     "hybrid_score", "final_verdict", "true_label"}
    for r in rows:
        if r["filter_verdict"] == "1":
            assert float(r["hybrid_score"]) == 1.0 and r["final_verdict"] == "1"


def test_bench_report(workflow):
    doc = json.loads(workflow["bench.json"].read_text())
    assert doc["reference_rates"]["end_to_end_flows_per_s"] == 17000.0
    assert doc["median"]["end_to_end_flows_per_s"] > 0


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["extract", "--in", "x.csv"]) == EXIT_USAGE
    assert main(["fit-filter", "--train", "a", "--out", "b", "--omit", "nope"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK
    assert "usage" in capsys.readouterr().err


def test_data_errors(workflow, tmp_path, capsys):
    assert main(["extract", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n")
    assert main(["extract", "--in", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "line 1" in capsys.readouterr().err

    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"ports": [22, 80, 443], "min_flows": 10, "window_seconds": 180}))
    w = {k: str(v) for k, v in workflow.items()}
    assert main(["eval", "--experiment", "hybrid", "--schema", str(schema), "--train", w["train_s.csv"],
                 "--test", w["test_s.csv"], "--out", str(tmp_path / "e.json")]) == EXIT_DATA
    assert main(["run", "--schema", str(schema), "--in", w["test.csv"], "--forest", w["forest.json"],
                 "--vae", w["vae.json"], "--out", str(tmp_path / "r.csv")]) == EXIT_DATA
    assert "feature schema" in capsys.readouterr().err


def test_custom_schema_end_to_end(workflow, tmp_path):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"ports": [22, 25, 53, 80, 443], "min_flows": 5, "window_seconds": 60}))
    out = tmp_path / "s.csv"
    assert main(["extract", "--quiet", "--threads", "1", "--schema", str(schema), "--in", str(workflow["test.csv"]),
                 "--out", str(out)]) == EXIT_OK
    assert len(out.open().readline().split(",")) == 15 + 10 + 4
