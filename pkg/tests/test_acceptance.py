"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Runs on the default seeded synthetic dataset (``GenConfig(seed=0)``) with
full-size models. The lines are repeated in the pytest terminal summary.
"""
import itertools
import math
import time

import numpy as np
import pytest

from hybridnids.evaluation import (
    REFERENCE_THROUGHPUT,
    bench_throughput,
    confusion_metrics,
    prepare_split,
    roc_auc,
    run_filter_comparison,
    run_hybrid_comparison,
    run_novelty,
)
from hybridnids.features import FeatureSchema, aggregate_window, extract_dataset
from hybridnids.flows import ClassLabel, FlowRecord
from hybridnids.forest import RandomForest, balance_binary
from hybridnids.pipeline import HybridDetector
from hybridnids.vae import select_threshold

from conftest import run_cli_workflow
from test_vae import gradient_check

pytestmark = pytest.mark.slow


def pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_c01_auc_oracle(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[rng.choice(n, 2, replace=False)] = [0, 1]
        # alternate continuous and heavily tied scores
        s = rng.random(n) if i % 2 else rng.integers(0, 5, n) / 4.0
        worst = max(worst, abs(roc_auc(s, y)[0] - pair_count_auc(s, y)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 5
    acceptance(1, ok, f"max |trapezoid - pair count| = {worst:.2e} over 100 instances in {elapsed:.2f}s")
    assert ok


def test_c02_reference_recalls(acceptance):
    a = confusion_metrics([1] * 1859 + [0] * 59, [1] * 1918).recall1
    b = confusion_metrics([1] * 1470 + [0] * 448, [1] * 1918).recall1
    ok = round(a, 4) == 0.9692 and round(b, 4) == 0.7664
    acceptance(2, ok, f"recall1 {a:.4f} (expect 0.9692), {b:.4f} (expect 0.7664)")
    assert ok


def test_c03_gradient_check(acceptance):
    start = time.perf_counter()
    err = gradient_check()
    elapsed = time.perf_counter() - start
    ok = err < 1e-4 and elapsed < 30
    acceptance(3, ok, f"max relative gradient error {err:.2e} in {elapsed:.2f}s")
    assert ok


def test_c04_vae_learning(acceptance, default_data, default_vae):
    vae, norm, seconds = default_vae
    hist = vae.loss_history_
    test = default_data.test
    bg = norm.transform(test.X[[lab is ClassLabel.BACKGROUND for lab in test.labels]])
    dos = norm.transform(test.X[[lab is ClassLabel.DOS for lab in test.labels]])
    e_bg, e_dos = vae.score_samples(bg).mean(), vae.score_samples(dos).mean()
    ok = hist[-1] < 0.5 * hist[0] and e_bg < e_dos and seconds < 300
    acceptance(4, ok, f"loss {hist[0]:.4f} -> {hist[-1]:.4f}; held-out background error {e_bg:.4f} "
                      f"< dos error {e_dos:.4f}; trained in {seconds:.1f}s")
    assert ok


def test_c05_hybrid_beats_vae(acceptance, default_data, default_vae):
    vae, _, vae_seconds = default_vae
    start = time.perf_counter()
    res = run_hybrid_comparison(default_data.train, default_data.test, seed=0, vae=vae)
    total = default_data.seconds + vae_seconds + time.perf_counter() - start
    o, m = res["reports"]["original"], res["reports"]["modified"]
    ok = m.auc >= o.auc + 0.03 and m.counts.fp <= 1.25 * o.counts.fp and total < 600
    acceptance(5, ok, f"AUC {o.auc:.4f} -> {m.auc:.4f} ({100 * (m.auc - o.auc):+.2f}%), "
                      f"FP {o.counts.fp} -> {m.counts.fp}, tau {res['threshold']['tau']:.5f}, "
                      f"{total:.0f}s end to end")
    assert ok


def test_c06_binary_filter(acceptance, default_data):
    res = run_filter_comparison(default_data.train, default_data.test, seed=0)
    b, m = res["reports"]["binary (test)"], res["reports"]["multiclass (test)"]
    ok = b.counts.fp <= m.counts.fp and b.auc >= m.auc - 0.01
    acceptance(6, ok, f"test FP binary {b.counts.fp} vs multiclass {m.counts.fp}; "
                      f"AUC {b.auc:.4f} vs {m.auc:.4f}")
    assert ok


def test_c07_novelty(acceptance, default_data, default_vae):
    vae = default_vae[0]
    spam = run_novelty(default_data.train, default_data.test, [ClassLabel.SPAM], seed=0, vae=vae)
    scan = run_novelty(default_data.train, default_data.test, [ClassLabel.SCAN11], seed=0, vae=vae)
    clf_spam = spam["reports"]["classifier (full)"].per_class_recall["anomaly-spam"]
    hyb_spam = spam["reports"]["hybrid (full)"].per_class_recall["anomaly-spam"]
    clf_scan = scan["reports"]["classifier (full)"].per_class_recall["scan11"]
    ok = clf_spam <= 0.05 and hyb_spam >= 0.10 and clf_scan >= 0.5
    acceptance(7, ok, f"spam omitted: classifier {clf_spam:.4f}, hybrid {hyb_spam:.4f}; "
                      f"scan11 omitted: classifier {clf_scan:.4f}")
    assert ok


def test_c08_threshold(acceptance):
    tau = select_threshold([0.0, 0.1, 0.2], k=1).tau
    direct = 0.1 + math.sqrt(((0.0 - 0.1) ** 2 + 0.0 + (0.2 - 0.1) ** 2) / 3)
    ok = abs(tau - 0.1816497) <= 1e-6 and abs(tau - direct) <= 1e-12
    acceptance(8, ok, f"tau = {tau:.7f} (direct arithmetic {direct:.7f})")
    assert ok


SRC_PORTS = np.array([20, 22, 25, 53, 80, 443, 990, 1024, 40000, 50000, 60001])
DST_PORTS = np.array([21, 22, 23, 25, 53, 80, 123, 443, 3389, 6667, 8080])
PROTOCOLS = ["TCP", "UDP", "ICMP", "GRE"]
LABELS = [ClassLabel.BACKGROUND, ClassLabel.DOS, ClassLabel.SCAN11, ClassLabel.SPAM]


def fuzz_window(rng, w, src):
    n = int(rng.integers(1, 60))
    t0 = 1458345600 + 180.0 * w
    # narrow pools on some windows to force zero entropies and single-port windows
    k = int(rng.integers(1, len(SRC_PORTS) + 1))
    flows = []
    for _ in range(n):
        proto = PROTOCOLS[int(rng.integers(0, len(PROTOCOLS)))]
        flows.append(FlowRecord(
            end_time=t0 + float(rng.uniform(0, 179.999)),
            duration=float(rng.choice([0.0, rng.exponential(5.0)])),
            src_ip=src,
            dst_ip=f"10.{int(rng.integers(0, 3))}.0.{int(rng.integers(0, k))}",
            src_port=int(rng.choice(SRC_PORTS[:k])),
            dst_port=int(rng.choice(DST_PORTS[:k])),
            protocol=proto,
            tcp_flags=int(rng.integers(0, 64)),
            fwd_status=0,
            tos=0,
            packets=int(rng.integers(1, 10**6)),
            bytes=int(rng.integers(1, 10**9)),
            label=LABELS[int(rng.integers(0, len(LABELS)))],
        ))
    return flows


def test_c09_extraction_invariants(acceptance):
    rng = np.random.default_rng(9)
    schema = FeatureSchema()
    checked = 0
    problems = []
    all_flows = []
    w = 0
    while checked < 10_000:
        flows = fuzz_window(rng, w, f"172.16.{w % 200}.{w // 200 % 250}")
        w += 1
        all_flows.extend(flows)
        if len(flows) <= schema.min_flows:
            continue
        checked += 1
        s = aggregate_window(flows, schema)
        f = s.features
        if f.shape != (69,) or not np.all(np.isfinite(f)):
            problems.append(f"window {w}: non-finite or wrong shape")
        if f[15:42].sum() > 1 + 1e-12 or f[42:69].sum() > 1 + 1e-12:
            problems.append(f"window {w}: port proportions exceed 1")
        if np.any(f[10:15] > math.log2(len(flows)) + 1e-12):
            problems.append(f"window {w}: entropy above log2(n)")
        perm = [flows[i] for i in rng.permutation(len(flows))]
        t = aggregate_window(perm, schema)
        if not np.array_equal(t.features, f) or t.label is not s.label:
            problems.append(f"window {w}: permutation changed the sample")

    samples, rep = extract_dataset(all_flows, schema)
    for lab in ClassLabel:
        if rep.total[lab] != rep.omitted[lab] + rep.kept[lab] or rep.outvoted[lab] > rep.kept[lab]:
            problems.append(f"accounting broken for {lab.value}")
    if sum(rep.total.values()) != len(all_flows) or sum(rep.kept.values()) != sum(
            s.flow_count for s in samples) or len(samples) != checked:
        problems.append("flow totals do not add up")
    ok = not problems
    acceptance(9, ok, f"{checked} windows fuzzed from {len(all_flows)} flows; "
                      f"{len(problems)} violations" + (f" (first: {problems[0]})" if problems else ""))
    assert ok, problems[:5]


def test_c10_throughput(acceptance, default_data, default_vae):
    vae, norm, _ = default_vae
    train, _, _ = prepare_split(default_data.train, default_data.test)
    sub = balance_binary(train, seed=0)
    forest = RandomForest(random_state=0).fit(norm.transform(sub.X), sub.y_binary)
    det = HybridDetector(norm, forest, vae)
    rep = bench_throughput(default_data.test_path, det, repetitions=3)
    rate = rep.median["end_to_end_flows_per_s"]
    ref = rep.reference_rates["end_to_end_flows_per_s"]
    ok = rate >= REFERENCE_THROUGHPUT["network_demand_flows_per_s"] and ref == 17000.0
    acceptance(10, ok, f"end-to-end {rate:,.0f} flows/s on {rep.flows} flows "
                       f"(demand 1,273; reference {ref:,.0f})")
    assert ok


# bench timings are wall-clock measurements and are exempt from byte identity
TIMED = {"bench.json"}


def test_c11_cli_determinism(acceptance, tmp_path):
    # identical arguments, output paths included, so rerun in place
    paths = run_cli_workflow(tmp_path)
    first = {name: p.read_bytes() for name, p in paths.items()}
    run_cli_workflow(tmp_path)
    differ = [name for name, p in paths.items() if name not in TIMED and p.read_bytes() != first[name]]
    ok = not differ
    acceptance(11, ok, f"{len(paths) - len(TIMED)} primary outputs from 8 subcommands compared byte for byte; "
                       f"{len(differ)} differ" + (f": {', '.join(differ)}" if differ else ""))
    assert ok
