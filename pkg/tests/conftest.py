import time

import numpy as np
import pytest

from hybridnids.evaluation import prepare_split
from hybridnids.features import FeatureSchema, SampleSet, extract_dataset
from hybridnids.flows import ClassLabel, FlowRecord, stream_flows
from hybridnids.synth import GenConfig, generate, generate_flows
from hybridnids.vae import VariationalAutoencoder


def make_flow(t=0.0, src="10.0.0.1", dst="10.0.0.2", sport=40000, dport=80, proto="TCP",
              flags=0b000010, duration=0.5, packets=3, byts=180, label=ClassLabel.BACKGROUND):
    return FlowRecord(t, duration, src, dst, sport, dport, proto, flags, 0, 0, packets, byts, label)


def pytest_configure(config):
    config._acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config._acceptance_lines
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion, shown in the terminal summary."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines[number] = line
        print(line)
        return ok
    return record


class Dataset:
    """The default seeded synthetic dataset, on disk and extracted."""

    def __init__(self, root, config):
        self.config = config
        self.schema = FeatureSchema()
        self.train_path = root / "train_flows.csv"
        self.test_path = root / "test_flows.csv"
        self.manifest = generate(config, self.train_path, self.test_path, root / "manifest.json")
        tr, self.train_visibility = extract_dataset(stream_flows(self.train_path), self.schema)
        te, self.test_visibility = extract_dataset(stream_flows(self.test_path), self.schema)
        self.train = SampleSet.from_samples(tr, self.schema)
        self.test = SampleSet.from_samples(te, self.schema)


@pytest.fixture(scope="session")
def default_data(tmp_path_factory):
    start = time.perf_counter()
    data = Dataset(tmp_path_factory.mktemp("default"), GenConfig(seed=0))
    data.seconds = time.perf_counter() - start
    return data


@pytest.fixture(scope="session")
def default_vae(default_data):
    """Full-size VAE trained on the default training background.

    Returns ``(vae, normalizer, training_seconds)``.
    """
    start = time.perf_counter()
    train, _, norm = prepare_split(default_data.train, default_data.test)
    bg = train.subset(np.array([lab is ClassLabel.BACKGROUND for lab in train.labels]))
    vae = VariationalAutoencoder(random_state=0).fit(norm.transform(bg.X))
    return vae, norm, time.perf_counter() - start


@pytest.fixture(scope="session")
def small_flows():
    """A short, cheap split for unit-level pipeline tests."""
    cfg = GenConfig(duration=1800, background_sources=30, seed=3)
    return generate_flows(cfg, "train")[0], generate_flows(cfg, "test")[0]


def run_cli_workflow(root, seed=0):
    """Drive every subcommand once on a small dataset; return ``{name: path}``."""
    from hybridnids.cli import main

    p = {name: root / name for name in (
        "train.csv", "test.csv", "gen.json", "train_s.csv", "test_s.csv", "vis.json",
        "forest.json", "vae.json", "loss.csv", "results.csv", "filter.json", "hybrid.json",
        "roc.csv", "kde.csv", "novelty.json", "bench.json")}
    s = ["--seed", str(seed), "--quiet"]
    cmds = [
        ["gen", *s, "--duration", "1800", "--background-sources", "30", "--train-out", p["train.csv"],
         "--test-out", p["test.csv"], "--manifest-out", p["gen.json"]],
        ["extract", *s, "--in", p["train.csv"], "--out", p["train_s.csv"], "--visibility", p["vis.json"]],
        ["extract", *s, "--in", p["test.csv"], "--out", p["test_s.csv"]],
        ["fit-filter", *s, "--train", p["train_s.csv"], "--out", p["forest.json"], "--trees", "10",
         "--per-class", "100"],
        ["fit-vae", *s, "--train", p["train_s.csv"], "--out", p["vae.json"], "--loss-csv", p["loss.csv"],
         "--epochs", "2"],
        ["run", *s, "--in", p["test.csv"], "--forest", p["forest.json"], "--vae", p["vae.json"],
         "--out", p["results.csv"]],
        ["eval", *s, "--experiment", "filter", "--train", p["train_s.csv"], "--test", p["test_s.csv"],
         "--out", p["filter.json"], "--trees", "10", "--per-class", "100"],
        ["eval", *s, "--experiment", "hybrid", "--train", p["train_s.csv"], "--test", p["test_s.csv"],
         "--out", p["hybrid.json"], "--vae", p["vae.json"], "--roc-out", p["roc.csv"],
         "--kde-out", p["kde.csv"], "--trees", "10", "--per-class", "100"],
        ["novelty", *s, "--train", p["train_s.csv"], "--test", p["test_s.csv"], "--omit", "anomaly-spam",
         "--restricted", "--out", p["novelty.json"], "--vae", p["vae.json"], "--trees", "10",
         "--per-class", "100"],
        ["bench", *s, "--in", p["test.csv"], "--forest", p["forest.json"], "--vae", p["vae.json"],
         "--repetitions", "1", "--out", p["bench.json"]],
    ]
    for cmd in cmds:
        code = main([str(c) for c in cmd])
        if code != 0:
            raise AssertionError(f"{cmd[0]} exited with {code}")
    return p
