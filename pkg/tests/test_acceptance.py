"""One test per acceptance criterion; each prints a PASS/FAIL line and asserts it."""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import random_ssm, ssm_recurrence, tiny_model_gradient_errors
from slimseiz.chansel import SelectionConfig, select_channels
from slimseiz.eeg_io import (
    SynthConfig,
    dump_annotations,
    load_annotations,
    parse_edf,
    read_edf,
    synth_eeg,
    write_edf,
)
from slimseiz.mlcore import compute_metrics, pca_fit, smote, tree_fit
from slimseiz.model import REFERENCE_PARAMETER_COUNT, ModelConfig, build_model, evaluate, parameter_count
from slimseiz.nn import Tensor, ssm_scan
from slimseiz.pipeline import KFold, WindowingConfig, balanced_preictal_stride, build_dataset, make_split
from test_eeg_io import _malformed_corpus, _random_crafted
from test_mlcore import _on_neighbor_segment, brute_root_split, jacobi_eigenvalues
from test_nn import GRADIENT_CASES, gradcheck_worst

pytestmark = pytest.mark.acceptance


def test_ssm_oracle(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        b, length, d, n = (int(rng.integers(1, hi + 1)) for hi in (4, 32, 8, 4))
        params = random_ssm(rng, d, n, rank=int(rng.integers(1, 3)), dtype=np.float32)
        x = rng.standard_normal((b, length, d)).astype(np.float32)
        got = ssm_scan(params, Tensor(x)).data
        oracle = ssm_recurrence(params, x)
        worst = max(worst, float(np.max(np.abs(got - oracle)) / max(np.max(np.abs(oracle)), 1e-30)))
    elapsed = time.perf_counter() - start
    criterion("SSM oracle", worst < 1e-5 and elapsed < 5,
              f"max rel err {worst:.2e} over 100 instances (< 1e-5), {elapsed:.2f} s (< 5 s)")


def test_gradient_suite(criterion):
    start = time.perf_counter()
    ops = {name: gradcheck_worst(name) for name in GRADIENT_CASES}
    tiny32 = max(tiny_model_gradient_errors("float32").values())
    tiny64 = max(tiny_model_gradient_errors("float64").values())
    elapsed = time.perf_counter() - start
    worst_op = max(ops, key=ops.get)
    ok = ops[worst_op] < 1e-3 and tiny32 < 1e-2 and tiny64 < 1e-4 and elapsed < 60
    criterion("gradient suite", ok,
              f"{len(ops)} ops worst {worst_op} {ops[worst_op]:.1e} (< 1e-3); tiny model float32 "
              f"{tiny32:.1e} (< 1e-2), float64 {tiny64:.1e} (< 1e-4); {elapsed:.1f} s (< 60 s)")


def test_mlcore_oracles(criterion):
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    pca_err = 0.0
    for shape in [(50, 10), (30, 6), (80, 12)]:
        X = rng.standard_normal(shape) @ rng.standard_normal((shape[1], shape[1]))
        q = shape[1] - 1
        model = pca_fit(X, n_components=q)
        Xc = X - X.mean(axis=0)
        oracle = jacobi_eigenvalues(Xc.T @ Xc / (shape[0] - 1))[:q]
        pca_err = max(pca_err, float(np.max(np.abs(model.explained_variance - oracle) / oracle)))

    split_ok = 0
    for _ in range(50):
        X = np.round(rng.standard_normal((20, 2)), 1)
        y = rng.integers(0, 2, 20)
        y[:2] = [0, 1]
        tree = tree_fit(X, y, max_depth=1, min_leaf=1)
        f, thr, dec = brute_root_split(X, y, 1)
        split_ok += (tree.feature_index == f and np.isclose(tree.threshold, thr)
                     and np.isclose(tree.impurity_decrease, dec, atol=1e-12))

    smote_ok = 0
    for draw in range(100):
        n, d, k = int(rng.integers(2, 12)), int(rng.integers(1, 5)), int(rng.integers(1, 7))
        X = rng.standard_normal((n, d))
        out = smote(X, int(rng.integers(1, 30)), k, seed=draw)
        same = np.array_equal(out, smote(X, len(out), k, seed=draw))
        dist = ((X[:, None] - X[None]) ** 2).sum(-1)
        inside = all(
            _on_neighbor_segment(p, X[r % n], X[[j for j in np.argsort(dist[r % n], kind="stable")
                                                  if j != r % n][: min(k, n - 1)]])
            for r, p in enumerate(out)
        )
        smote_ok += same and inside
    elapsed = time.perf_counter() - start
    ok = pca_err < 1e-6 and split_ok == 50 and smote_ok == 100 and elapsed < 30
    criterion("mlcore oracles", ok,
              f"PCA eigenvalue rel err {pca_err:.1e} (< 1e-6); CART root split {split_ok}/50; "
              f"SMOTE convex+deterministic {smote_ok}/100; {elapsed:.1f} s (< 30 s)")


def test_channel_selection(criterion):
    start = time.perf_counter()
    hits = []
    for seed in range(20):
        rec = synth_eeg(SynthConfig(
            num_channels=8, duration_s=2400.0, sample_rate_hz=64.0, informative_channels={1, 3},
            preictal_onsets_s=[2000.0], ictal_duration_s=30.0, seed=seed,
        ))
        chosen = select_channels(rec, SelectionConfig(k=2, m=30, seed=seed)).selected
        hits.append(set(chosen) == {1, 3})
    elapsed = time.perf_counter() - start
    criterion("channel selection", sum(hits) >= 19 and elapsed < 300,
              f"{{1,3}} chosen for {sum(hits)}/20 seeds (>= 19); {elapsed:.0f} s (< 300 s)")


def test_end_to_end_synthetic(criterion, tmp_path):
    start = time.perf_counter()
    rec = synth_eeg(SynthConfig(seed=0))  # 8 channels, 2 h, 256 Hz, seizures at 2100/4200/6300 s
    assert rec.num_channels == 8 and rec.duration_s == 7200 and len(rec.annotations) == 3
    (tmp_path / "synth.edf").write_bytes(write_edf(rec))
    (tmp_path / "synth.csv").write_text(dump_annotations(rec.annotations))
    rec = read_edf(tmp_path / "synth.edf")
    rec.annotations = load_annotations((tmp_path / "synth.csv").read_text())

    base = WindowingConfig()
    windowing = WindowingConfig(stride_preictal_s=balanced_preictal_stride([rec], base))
    dataset = build_dataset([rec], windowing)
    selection = select_channels(rec, SelectionConfig(k=4, m=30, seed=0))
    ds = dataset.select_channels(selection.selected)
    cfg = ModelConfig(in_channels=4, input_length=ds.X.shape[2])
    result = evaluate(ds, make_split(len(ds), KFold(10), 0, labels=ds.y), cfg)
    elapsed = time.perf_counter() - start
    acc, sens, spec = result.mean_accuracy, result.mean_sensitivity, result.mean_specificity
    ok = acc >= 0.95 and sens >= 0.93 and spec >= 0.93 and elapsed < 1800
    criterion("end-to-end synthetic", ok,
              f"channels {selection.selected}; 10-fold mean ACC {acc:.4f} (>= 0.95) SENS {sens:.4f} "
              f"(>= 0.93) SPEC {spec:.4f} (>= 0.93); {len(ds)} segments; {elapsed / 60:.1f} min (< 30 min)")


def test_parameter_budget(criterion):
    cfg = ModelConfig()
    count = build_model(cfg).count()
    ok = count == parameter_count(cfg) == 21_394 and count <= 25_000
    ok = ok and abs(count - REFERENCE_PARAMETER_COUNT) <= 0.2 * REFERENCE_PARAMETER_COUNT
    criterion("parameter budget", ok,
              f"{count} parameters (<= 25000, {100 * (count / REFERENCE_PARAMETER_COUNT - 1):+.1f}% vs 21.2K)")


def test_metrics_identity(criterion):
    truth = np.array([1] * 1000 + [0] * 1000)
    pred = np.array([1] * 955 + [0] * 45 + [0] * 940 + [1] * 60)
    r = compute_metrics(pred, truth)
    ok = (r.tp, r.fn, r.tn, r.fp) == (955, 45, 940, 60) and np.allclose(
        [r.accuracy, r.sensitivity, r.specificity], [0.9475, 0.955, 0.940], atol=1e-12)
    criterion("metrics identity", ok,
              f"ACC {r.accuracy:.4f} SENS {r.sensitivity:.4f} SPEC {r.specificity:.4f} (0.9475/0.955/0.940)")


def test_edf_round_trip(criterion):
    rng = np.random.default_rng(7)
    within = 0
    for _ in range(20):
        data, quantum = _random_crafted(rng)
        first = parse_edf(data)
        second = parse_edf(write_edf(first))
        within += bool(np.max(np.abs(second.samples - first.samples)) <= quantum)
    designated = 0
    for _, data, err in _malformed_corpus():
        try:
            parse_edf(data)
        except err:
            designated += 1
        except Exception:  # noqa: BLE001
            pass
    criterion("EDF round trip", within == 20 and designated == 10,
              f"{within}/20 round trips within one quantum; {designated}/10 malformed files raise their error")


def _cli(*argv, cwd):
    done = subprocess.run([sys.executable, "-m", "slimseiz", *map(str, argv)], cwd=cwd,
                          capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    return done.stdout


def test_cli_determinism(criterion, tmp_path):
    outputs = []
    for tag in ("first", "second"):
        d = tmp_path / tag
        d.mkdir()
        _cli("synth", "--out", d, "--channels", "4", "--duration", "2400", "--fs", "64",
             "--onsets", "2000", "--ictal", "30", "--seed", 11, cwd=d)
        _cli("ingest", d / "synth.edf", "--out", d / "cache.slsz", "--seed", 11, cwd=d)
        _cli("select", d / "cache.slsz", "--k", 2, "--m", 3, "--seed", 11, "--jobs", 1,
             "--out", d / "selection.tsv", cwd=d)
        _cli("train", d / "cache.slsz", "--selection", d / "selection.tsv", "--out", d / "run",
             "--epochs", 2, "--seed", 11, "--jobs", 1, cwd=d)
        _cli("eval", d / "cache.slsz", "--checkpoint", d / "run" / "model.ckpt", "--kfold", 3,
             "--epochs", 1, "--jobs", 1, "--out", d / "cv.csv", cwd=d)
        files = ["synth.edf", "synth.csv", "cache.slsz", "selection.tsv", "run/model.ckpt",
                 "run/metrics.csv", "run/train_log.csv", "run/manifest.txt", "cv.csv"]
        outputs.append({f: (d / f).read_bytes() for f in files})
    same = [f for f in outputs[0] if outputs[0][f] == outputs[1][f]]
    criterion("determinism", len(same) == len(outputs[0]),
              f"{len(same)}/{len(outputs[0])} artifacts byte-identical across two CLI runs")


CHB01 = os.environ.get("SLIMSEIZ_CHB01")


@pytest.mark.skipif(not CHB01, reason="set SLIMSEIZ_CHB01 to a directory of chb01 EDF + CSV pairs")
def test_chb01_smoke(criterion):
    edfs = sorted(Path(CHB01).glob("*.edf"))
    recs = []
    for path in edfs:
        rec = read_edf(path)
        rec.annotations = load_annotations(path.with_suffix(".csv").read_text())
        recs.append(rec)
    windowing = WindowingConfig(stride_preictal_s=balanced_preictal_stride(recs, WindowingConfig()))
    dataset = build_dataset(recs, windowing)
    chosen = select_channels(dataset, SelectionConfig(k=8)).selected
    ds = dataset.select_channels(chosen)
    cfg = ModelConfig(in_channels=8, input_length=ds.X.shape[2])
    result = evaluate(ds, make_split(len(ds), KFold(10), 0, labels=ds.y), cfg)
    criterion("chb01 smoke (optional)", result.mean_accuracy >= 0.85,
              f"10-fold mean ACC {result.mean_accuracy:.4f} (>= 0.85)")
