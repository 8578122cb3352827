"""Windowing, labelling and partitioning of annotated recordings.

Time intervals are half-open: a window covers ``[start, start + window_s)``
and a seizure covers ``[onset_s, offset_s)``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .eeg_io import EegRecording, SeizureAnnotation
from .errors import DataError, EmptyClass, TooFewSamples
from .rng import stream


class Label(IntEnum):
    OTHER = 0
    PREICTAL = 1


@dataclass
class Segment:
    data: np.ndarray  # [channels x window_samples]
    label: Label
    source_time_s: float
    source_recording: str = ""


@dataclass
class WindowingConfig:
    window_s: float = 4.0
    preictal_horizon_s: float = 1800.0
    merge_gap_s: float = 1800.0
    stride_preictal_s: float | None = None
    stride_other_s: float | None = None

    def __post_init__(self):
        if self.stride_preictal_s is None:
            self.stride_preictal_s = self.window_s
        if self.stride_other_s is None:
            self.stride_other_s = self.window_s
        for name in ("window_s", "preictal_horizon_s", "merge_gap_s", "stride_preictal_s", "stride_other_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def merge_seizures(
    annotations: Sequence[SeizureAnnotation], merge_gap_s: float = 1800.0
) -> list[SeizureAnnotation]:
    """Fuse consecutive seizures separated by less than ``merge_gap_s``."""
    merged: list[SeizureAnnotation] = []
    for ann in sorted(annotations):
        if merged and ann.onset_s - merged[-1].offset_s < merge_gap_s:
            last = merged.pop()
            ann = SeizureAnnotation(last.onset_s, max(last.offset_s, ann.offset_s))
        merged.append(ann)
    return merged


def _samples(seconds: float, fs: float, what: str) -> int:
    n = seconds * fs
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"{what} of {seconds} s is not a whole number of samples at {fs} Hz")
    return int(round(n))


def window_plan(
    num_samples: int,
    fs: float,
    merged: Sequence[SeizureAnnotation],
    cfg: WindowingConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Window start samples and labels, sorted by start."""
    w = _samples(cfg.window_s, fs, "window")
    step_pre = _samples(cfg.stride_preictal_s, fs, "pre-ictal stride")
    step_other = _samples(cfg.stride_other_s, fs, "stride")

    starts, labels = [], []
    prev_offset = 0.0
    bands = []
    for ev in merged:
        lo_s = max(0.0, ev.onset_s - cfg.preictal_horizon_s, prev_offset)
        lo = math.ceil(lo_s * fs - 1e-9)
        hi = min(num_samples, math.floor(ev.onset_s * fs + 1e-9))
        if hi - lo >= w:
            pre = np.arange(lo, hi - w + 1, step_pre)
            starts.append(pre)
            labels.append(np.full(pre.size, Label.PREICTAL, dtype=np.int8))
        band_lo = math.floor(max(0.0, ev.onset_s - cfg.preictal_horizon_s) * fs + 1e-9)
        band_hi = math.ceil(ev.offset_s * fs - 1e-9)
        bands.append((band_lo, band_hi))
        prev_offset = ev.offset_s

    grid = np.arange(0, num_samples - w + 1, step_other) if num_samples >= w else np.arange(0)
    keep = np.ones(grid.size, dtype=bool)
    for band_lo, band_hi in bands:
        keep &= ~((grid < band_hi) & (grid + w > band_lo))
    starts.append(grid[keep])
    labels.append(np.full(int(keep.sum()), Label.OTHER, dtype=np.int8))

    starts_a = np.concatenate(starts).astype(np.int64)
    labels_a = np.concatenate(labels)
    order = np.argsort(starts_a, kind="stable")
    return starts_a[order], labels_a[order]


def balanced_preictal_stride(
    recordings: Sequence[EegRecording], cfg: WindowingConfig
) -> float:
    """Pre-ictal stride (whole samples) whose window count best matches the Other count.

    Ties go to the smaller stride.  The Other count uses ``cfg.stride_other_s``.
    """
    if not recordings:
        raise ValueError("no recordings")
    fs = recordings[0].sample_rate_hz
    plans = [
        (rec.num_samples, merge_seizures(rec.annotations, cfg.merge_gap_s)) for rec in recordings
    ]

    def counts(step: int) -> tuple[int, int]:
        trial = WindowingConfig(
            cfg.window_s, cfg.preictal_horizon_s, cfg.merge_gap_s, step / fs, cfg.stride_other_s
        )
        pre = other = 0
        for num_samples, merged in plans:
            _, labels = window_plan(num_samples, fs, merged, trial)
            pre += int(np.sum(labels == Label.PREICTAL))
            other += int(np.sum(labels == Label.OTHER))
        return pre, other

    _, n_other = counts(1)
    hi = max(1, int(round(cfg.preictal_horizon_s * fs)))
    lo = 1
    # smallest step whose pre-ictal count does not exceed the Other count
    while lo < hi:
        mid = (lo + hi) // 2
        if counts(mid)[0] <= n_other:
            hi = mid
        else:
            lo = mid + 1
    best = lo
    if lo > 1 and abs(counts(lo - 1)[0] - n_other) <= abs(counts(lo)[0] - n_other):
        best = lo - 1
    return best / fs


def label_windows(
    rec: EegRecording,
    merged: Sequence[SeizureAnnotation],
    cfg: WindowingConfig,
    require_both: bool = True,
) -> list[Segment]:
    """Cut ``rec`` into labelled windows.

    Windows entirely inside the pre-ictal horizon before a merged event are
    PREICTAL; windows touching an ictal span or straddling a class boundary
    are dropped; everything else is OTHER.
    """
    starts, labels = window_plan(rec.num_samples, rec.sample_rate_hz, merged, cfg)
    if require_both:
        for cls in Label:
            if not np.any(labels == cls):
                raise EmptyClass(f"recording {rec.name or '<unnamed>'} yields no {cls.name} windows")
    w = _samples(cfg.window_s, rec.sample_rate_hz, "window")
    fs = rec.sample_rate_hz
    return [
        Segment(rec.samples[:, s : s + w], Label(int(lab)), s / fs, rec.name)
        for s, lab in zip(starts, labels)
    ]


# ---------------------------------------------------------------------------
# array form + cache


@dataclass
class SegmentDataset:
    """Stacked segments: ``X`` is [n x channels x window_samples] float32."""

    X: np.ndarray
    y: np.ndarray
    channel_labels: list[str]
    sample_rate_hz: float
    source_time_s: np.ndarray = None
    recording_index: np.ndarray = None
    recording_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int8)
        n = self.X.shape[0]
        if self.X.ndim != 3 or self.y.shape != (n,):
            raise ValueError("X must be [n x channels x samples] with one label per row")
        if self.X.shape[1] != len(self.channel_labels):
            raise ValueError("channel label count does not match X")
        if self.source_time_s is None:
            self.source_time_s = np.zeros(n)
        if self.recording_index is None:
            self.recording_index = np.zeros(n, dtype=np.int64)
        self.source_time_s = np.asarray(self.source_time_s, dtype=np.float64)
        self.recording_index = np.asarray(self.recording_index, dtype=np.int64)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def counts(self) -> dict[Label, int]:
        return {cls: int(np.sum(self.y == cls)) for cls in Label}

    def subset(self, indices) -> "SegmentDataset":
        idx = np.asarray(indices)
        return SegmentDataset(
            self.X[idx], self.y[idx], self.channel_labels, self.sample_rate_hz,
            self.source_time_s[idx], self.recording_index[idx], self.recording_names,
        )

    def select_channels(self, channels: Sequence[int]) -> "SegmentDataset":
        channels = list(channels)
        return SegmentDataset(
            self.X[:, channels], self.y, [self.channel_labels[c] for c in channels],
            self.sample_rate_hz, self.source_time_s, self.recording_index, self.recording_names,
        )


def stack_segments(
    segments: Sequence[Segment], channel_labels: Sequence[str], sample_rate_hz: float
) -> SegmentDataset:
    names: list[str] = []
    rec_idx = []
    for seg in segments:
        if seg.source_recording not in names:
            names.append(seg.source_recording)
        rec_idx.append(names.index(seg.source_recording))
    if segments:
        X = np.stack([s.data for s in segments]).astype(np.float32)
    else:
        X = np.zeros((0, len(channel_labels), 0), dtype=np.float32)
    return SegmentDataset(
        X,
        np.array([int(s.label) for s in segments], dtype=np.int8),
        list(channel_labels),
        sample_rate_hz,
        np.array([s.source_time_s for s in segments]),
        np.array(rec_idx, dtype=np.int64),
        names,
    )


def build_dataset(recordings: Sequence[EegRecording], cfg: WindowingConfig) -> SegmentDataset:
    """Merge, window and stack several recordings of one patient."""
    if not recordings:
        raise DataError("no recordings given")
    first = recordings[0]
    segments: list[Segment] = []
    for rec in recordings:
        if rec.channel_labels != first.channel_labels or rec.sample_rate_hz != first.sample_rate_hz:
            raise DataError(f"recording {rec.name} does not share the channel layout of {first.name}")
        merged = merge_seizures(rec.annotations, cfg.merge_gap_s)
        segments.extend(label_windows(rec, merged, cfg, require_both=False))
    ds = stack_segments(segments, first.channel_labels, first.sample_rate_hz)
    for cls, n in ds.counts.items():
        if n == 0:
            raise EmptyClass(f"no {cls.name} windows across {len(recordings)} recording(s)")
    return ds


CACHE_MAGIC = b"SLSZ1"


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def dump_dataset(ds: SegmentDataset) -> bytes:
    """SLSZ1 container.

    Layout (little-endian)::

        "SLSZ1" u32 n  u32 channels  u32 window_samples  f64 sample_rate
                u32 n_preictal  u32 n_other
        channels x (u16 len, utf-8 label)
        u32 n_recordings, n_recordings x (u16 len, utf-8 name)
        f32 data[n][channels][window_samples]
        u8 labels[n]
        f64 source_time_s[n]
        u32 recording_index[n]
    """
    n, c, w = ds.X.shape
    out = io.BytesIO()
    out.write(CACHE_MAGIC)
    counts = ds.counts
    out.write(struct.pack("<IIIdII", n, c, w, ds.sample_rate_hz, counts[Label.PREICTAL], counts[Label.OTHER]))
    for lab in ds.channel_labels:
        out.write(_pack_str(lab))
    out.write(struct.pack("<I", len(ds.recording_names)))
    for name in ds.recording_names:
        out.write(_pack_str(name))
    out.write(np.ascontiguousarray(ds.X, dtype="<f4").tobytes())
    out.write(ds.y.astype(np.uint8).tobytes())
    out.write(ds.source_time_s.astype("<f8").tobytes())
    out.write(ds.recording_index.astype("<u4").tobytes())
    return out.getvalue()


def load_dataset(data: bytes) -> SegmentDataset:
    if data[:5] != CACHE_MAGIC:
        raise DataError("not an SLSZ1 dataset cache")
    buf = io.BytesIO(data[5:])

    def take(fmt):
        size = struct.calcsize(fmt)
        raw = buf.read(size)
        if len(raw) != size:
            raise DataError("dataset cache is truncated")
        return struct.unpack(fmt, raw)

    def take_str():
        (length,) = take("<H")
        return buf.read(length).decode("utf-8")

    n, c, w, fs, n_pre, n_other = take("<IIIdII")
    labels = [take_str() for _ in range(c)]
    (n_rec,) = take("<I")
    names = [take_str() for _ in range(n_rec)]

    def array(dtype, count):
        dt = np.dtype(dtype)
        raw = buf.read(dt.itemsize * count)
        if len(raw) != dt.itemsize * count:
            raise DataError("dataset cache is truncated")
        return np.frombuffer(raw, dtype=dt)

    X = array("<f4", n * c * w).reshape(n, c, w)
    y = array("u1", n).astype(np.int8)
    times = array("<f8", n)
    rec_idx = array("<u4", n).astype(np.int64)
    ds = SegmentDataset(X, y, labels, fs, times, rec_idx, names)
    if ds.counts[Label.PREICTAL] != n_pre or ds.counts[Label.OTHER] != n_other:
        raise DataError("dataset cache class counts do not match its header")
    return ds


def save_dataset(ds: SegmentDataset, path: str | Path) -> None:
    Path(path).write_bytes(dump_dataset(ds))


def read_dataset(path: str | Path) -> SegmentDataset:
    return load_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class KFold:
    k: int = 10


@dataclass(frozen=True)
class Holdout:
    test_fraction: float = 0.2


@dataclass
class SplitPlan:
    seed: int
    fold_assignments: np.ndarray | None = None
    train_indices: np.ndarray | None = None
    test_indices: np.ndarray | None = None

    @property
    def n_folds(self) -> int:
        if self.fold_assignments is None:
            return 1
        return int(self.fold_assignments.max()) + 1

    def folds(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """(train_indices, test_indices) for every fold."""
        if self.fold_assignments is None:
            yield self.train_indices, self.test_indices
            return
        idx = np.arange(self.fold_assignments.size)
        for f in range(self.n_folds):
            mask = self.fold_assignments == f
            yield idx[~mask], idx[mask]


def make_split(
    n: int,
    plan_kind: KFold | Holdout,
    seed: int,
    labels: Sequence[int] | None = None,
) -> SplitPlan:
    """Stratified, seeded k-fold or holdout partition of ``n`` indices.

    Without ``labels`` all indices are treated as one stratum.
    """
    y = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError("labels must have length n")
    rng = stream(seed, "split")
    classes = np.unique(y)

    if isinstance(plan_kind, KFold):
        k = plan_kind.k
        if k < 2:
            raise ValueError("k-fold needs k >= 2")
        if n < k:
            raise TooFewSamples(f"{n} samples cannot fill {k} folds")
        folds = np.empty(n, dtype=np.int64)
        start = 0
        for cls in classes:
            members = rng.permutation(np.flatnonzero(y == cls))
            folds[members] = (start + np.arange(members.size)) % k
            start = (start + members.size) % k
        return SplitPlan(seed=seed, fold_assignments=folds)

    if isinstance(plan_kind, Holdout):
        f = plan_kind.test_fraction
        if not 0 < f < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        train, test = [], []
        for cls in classes:
            members = rng.permutation(np.flatnonzero(y == cls))
            n_test = int(math.floor(f * members.size + 0.5))
            test.append(members[:n_test])
            train.append(members[n_test:])
        train_a, test_a = np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
        if train_a.size == 0 or test_a.size == 0:
            raise TooFewSamples(f"holdout of {n} samples at fraction {f} leaves an empty side")
        return SplitPlan(seed=seed, train_indices=train_a, test_indices=test_a)

    raise TypeError(f"unknown plan kind {plan_kind!r}")
