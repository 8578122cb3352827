import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slimseiz.eeg_io import EegRecording, SeizureAnnotation
from slimseiz.errors import DataError, EmptyClass, TooFewSamples
from slimseiz.pipeline import (
    Holdout,
    KFold,
    Label,
    SegmentDataset,
    WindowingConfig,
    balanced_preictal_stride,
    build_dataset,
    dump_dataset,
    label_windows,
    load_dataset,
    make_split,
    merge_seizures,
    window_plan,
)

A = SeizureAnnotation


# --- merge_seizures ----------------------------------------------------------


def test_merge_close_pair():
    assert merge_seizures([A(100, 200), A(1900, 2000)], 1800) == [A(100, 2000)]


def test_merge_single_is_identity():
    assert merge_seizures([A(100, 200)], 1800) == [A(100, 200)]


def test_merge_far_pair_unchanged():
    evs = [A(0, 10), A(2000, 2010)]
    assert merge_seizures(evs, 1800) == evs


def test_merge_is_transitive():
    evs = [A(0, 10), A(1000, 1010), A(2000, 2010), A(9000, 9010)]
    assert merge_seizures(evs, 1800) == [A(0, 2010), A(9000, 9010)]


@st.composite
def _events(draw):
    n = draw(st.integers(0, 6))
    t, out = 0.0, []
    for _ in range(n):
        t += draw(st.floats(0.5, 4000))
        d = draw(st.floats(0.5, 300))
        out.append(A(t, t + d))
        t += d
    return out


@settings(max_examples=60, deadline=None)
@given(_events(), st.floats(1, 3000))
def test_merge_idempotent_and_sorted(evs, gap):
    once = merge_seizures(evs, gap)
    assert merge_seizures(once, gap) == once
    assert once == sorted(once)
    for a, b in zip(once, once[1:]):
        assert b.onset_s - a.offset_s >= gap


# --- windowing -----------------------------------------------------------------


def _flat_recording(duration_s, fs=4.0, anns=(), channels=1):
    n = int(duration_s * fs)
    samples = np.tile(np.arange(n, dtype=float), (channels, 1))
    return EegRecording([f"C{i}" for i in range(channels)], fs, samples, list(anns))


def test_preictal_count_with_unit_stride():
    merged = [A(3600, 3660)]
    cfg = WindowingConfig(window_s=4, stride_preictal_s=1)
    _, labels = window_plan(int(7200 * 4), 4.0, merged, cfg)
    assert np.sum(labels == Label.PREICTAL) == (1800 - 4) // 1 + 1 == 1797


def test_preictal_count_non_overlapping():
    _, labels = window_plan(int(7200 * 4), 4.0, [A(3600, 3660)], WindowingConfig(window_s=4))
    assert np.sum(labels == Label.PREICTAL) == 450


def test_no_annotations_raises_empty_class():
    rec = _flat_recording(100)
    with pytest.raises(EmptyClass):
        label_windows(rec, [], WindowingConfig())
    segs = label_windows(rec, [], WindowingConfig(), require_both=False)
    assert segs and all(s.label == Label.OTHER for s in segs)


def test_horizon_truncated_at_zero():
    starts, labels = window_plan(4 * 4000, 4.0, [A(1000, 1010)], WindowingConfig())
    pre = starts[labels == Label.PREICTAL]
    assert pre.min() == 0
    assert np.sum(labels == Label.PREICTAL) == 250


def test_segments_carry_source_data():
    rec = _flat_recording(4000, anns=[A(2000, 2010)])
    segs = label_windows(rec, merge_seizures(rec.annotations), WindowingConfig())
    for seg in segs[:5] + segs[-5:]:
        start = int(seg.source_time_s * 4)
        np.testing.assert_array_equal(seg.data[0], np.arange(start, start + 16))


def _check_label_purity(starts, labels, merged, fs, cfg, eps=1e-6):
    # eps absorbs float noise in boundaries that sit on the sample grid
    w = cfg.window_s
    for s, lab in zip(starts / fs, labels):
        for ev in merged:
            assert not (s < ev.offset_s - eps and s + w > ev.onset_s + eps)
            if lab == Label.OTHER:
                band_lo = max(0.0, ev.onset_s - cfg.preictal_horizon_s)
                assert not (s < ev.offset_s - eps and s + w > band_lo + eps)
        if lab == Label.PREICTAL:
            assert any(
                ev.onset_s - cfg.preictal_horizon_s - eps <= s and s + w <= ev.onset_s + eps
                for ev in merged
            )


@settings(max_examples=40, deadline=None)
@given(_events(), st.sampled_from([1.0, 2.0, 4.0]), st.sampled_from([1.0, 4.0, 6.0]))
def test_label_purity(evs, stride_pre, stride_other):
    fs = 2.0
    duration = (evs[-1].offset_s if evs else 0) + 3000
    cfg = WindowingConfig(window_s=4, preictal_horizon_s=600, merge_gap_s=900,
                          stride_preictal_s=stride_pre, stride_other_s=stride_other)
    merged = merge_seizures(evs, cfg.merge_gap_s)
    starts, labels = window_plan(int(duration * fs), fs, merged, cfg)
    _check_label_purity(starts, labels, merged, fs, cfg)


def test_smaller_preictal_stride_only_adds_preictal():
    merged = [A(3000, 3060), A(6000, 6100)]
    counts = []
    for stride in (8.0, 4.0, 2.0, 1.0):
        _, labels = window_plan(4 * 8000, 4.0, merged, WindowingConfig(stride_preictal_s=stride))
        counts.append((np.sum(labels == Label.PREICTAL), np.sum(labels == Label.OTHER)))
    pre = [c[0] for c in counts]
    other = {c[1] for c in counts}
    assert all(b > a for a, b in zip(pre, pre[1:]))
    assert len(other) == 1


def test_balanced_stride_is_closest_whole_sample_stride():
    fs = 4.0
    rec = _flat_recording(8000, fs=fs, anns=[A(2500, 2560), A(6000, 6030)])
    cfg = WindowingConfig()
    stride = balanced_preictal_stride([rec], cfg)
    step = round(stride * fs)

    def gap(step):
        trial = WindowingConfig(stride_preictal_s=step / fs)
        c = build_dataset([rec], trial).counts
        return abs(c[Label.PREICTAL] - c[Label.OTHER])

    assert gap(step) <= gap(step - 1) and gap(step) <= gap(step + 1)
    assert gap(step) < 0.05 * build_dataset([rec], cfg).counts[Label.OTHER]


def test_build_dataset_checks_layout():
    a = _flat_recording(4000, anns=[A(2000, 2010)])
    b = _flat_recording(4000, anns=[A(2000, 2010)], channels=2)
    with pytest.raises(DataError):
        build_dataset([a, b], WindowingConfig())


# --- cache ---------------------------------------------------------------------


def test_cache_round_trip_and_header_counts():
    rec = _flat_recording(4000, anns=[A(2000, 2010)], channels=2)
    ds = build_dataset([rec], WindowingConfig())
    blob = dump_dataset(ds)
    assert blob[:5] == b"SLSZ1"
    n, c, w = np.frombuffer(blob[5:17], dtype="<u4")
    assert (n, c, w) == ds.X.shape
    back = load_dataset(blob)
    assert back.X.tobytes() == ds.X.tobytes()
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.channel_labels == ds.channel_labels
    np.testing.assert_array_equal(back.source_time_s, ds.source_time_s)
    assert dump_dataset(back) == blob


def test_cache_rejects_garbage():
    with pytest.raises(DataError):
        load_dataset(b"NOTSLSZ")
    rec = _flat_recording(4000, anns=[A(2000, 2010)])
    blob = dump_dataset(build_dataset([rec], WindowingConfig()))
    with pytest.raises(DataError):
        load_dataset(blob[:-3])


# --- splits --------------------------------------------------------------------


def test_kfold_of_ten_has_singleton_folds():
    plan = make_split(10, KFold(10), seed=0)
    assert sorted(np.bincount(plan.fold_assignments).tolist()) == [1] * 10


def test_holdout_is_stratified():
    y = np.repeat([0, 1], 50)
    plan = make_split(100, Holdout(0.2), seed=3, labels=y)
    _, test = next(plan.folds())
    assert np.sum(y[test] == 0) == 10 and np.sum(y[test] == 1) == 10


def test_split_deterministic():
    y = np.random.default_rng(0).integers(0, 2, 57)
    a = make_split(57, KFold(5), 9, labels=y)
    b = make_split(57, KFold(5), 9, labels=y)
    np.testing.assert_array_equal(a.fold_assignments, b.fold_assignments)
    c = make_split(57, KFold(5), 10, labels=y)
    assert not np.array_equal(a.fold_assignments, c.fold_assignments)


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        make_split(3, KFold(10), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.lists(st.integers(0, 1), min_size=12, max_size=120), st.integers(0, 2**32))
def test_kfold_partition_and_balance(k, labels, seed):
    y = np.array(labels)
    plan = make_split(y.size, KFold(k), seed, labels=y)
    seen = np.concatenate([te for _, te in plan.folds()])
    assert sorted(seen.tolist()) == list(range(y.size))
    sizes = np.bincount(plan.fold_assignments, minlength=k)
    assert sizes.max() - sizes.min() <= 1
    for cls in (0, 1):
        per = np.bincount(plan.fold_assignments[y == cls], minlength=k)
        assert per.max() - per.min() <= 1
    for tr, te in plan.folds():
        assert np.intersect1d(tr, te).size == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.5), st.lists(st.integers(0, 1), min_size=20, max_size=200), st.integers(0, 2**32))
def test_holdout_proportions(f, labels, seed):
    y = np.array(labels)
    if min(np.sum(y == 0), np.sum(y == 1)) < 3:
        return
    tr, te = next(make_split(y.size, Holdout(f), seed, labels=y).folds())
    assert np.intersect1d(tr, te).size == 0 and tr.size + te.size == y.size
    for cls in (0, 1):
        assert abs(np.sum(y[te] == cls) - f * np.sum(y == cls)) <= 1


def test_dataset_subset_and_channel_selection():
    X = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    ds = SegmentDataset(X, [0, 1], ["a", "b", "c"], 1.0)
    sub = ds.select_channels([2, 0])
    assert sub.channel_labels == ["c", "a"]
    np.testing.assert_array_equal(sub.X[:, 0], X[:, 2])
    assert len(ds.subset([1])) == 1
