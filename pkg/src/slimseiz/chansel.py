"""Adaptive channel selection by repeated per-channel classical-ML accuracy voting."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .eeg_io import EegRecording
from .errors import DataError
from .mlcore import pca_fit, pca_transform, smote_balance, tree_fit, tree_predict
from .pipeline import Holdout, SegmentDataset, WindowingConfig, build_dataset, make_split
from .rng import child_seed, stream


@dataclass
class SelectionConfig:
    k: int = 8
    m: int = 30
    window_s: float = 5.0
    test_fraction: float = 0.2
    pca_variance: float = 0.95
    pca_max_components: int = 32
    smote_k: int = 5
    tree_max_depth: int = 10
    tree_min_leaf: int = 5
    preictal_horizon_s: float = 1800.0
    merge_gap_s: float = 1800.0
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")

    def windowing(self) -> WindowingConfig:
        return WindowingConfig(
            window_s=self.window_s,
            preictal_horizon_s=self.preictal_horizon_s,
            merge_gap_s=self.merge_gap_s,
        )

    def iteration_seed(self, iteration: int) -> int:
        return child_seed(self.seed, "iteration", iteration)


@dataclass
class ChannelTally:
    per_channel_accuracy: np.ndarray  # [m x C]
    appearance_counts: np.ndarray  # [C]
    selected: list[int]
    channel_labels: list[str] = field(default_factory=list)
    ranking: list[int] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.selected)

    @property
    def mean_accuracy(self) -> np.ndarray:
        return self.per_channel_accuracy.mean(axis=0)

    def top(self, k: int) -> list[int]:
        """First ``k`` channels of the overall ranking."""
        return self.ranking[:k]


def selection_dataset(rec: EegRecording, cfg: SelectionConfig) -> SegmentDataset:
    return build_dataset([rec], cfg.windowing())


def accuracy_on_split(
    X: np.ndarray,
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> float:
    """PCA (fit on train) -> SMOTE parity -> CART -> test accuracy, for one channel."""
    pca = pca_fit(X[train_idx], None, cfg.pca_variance, cfg.pca_max_components)
    z_train = pca_transform(pca, X[train_idx])
    z_test = pca_transform(pca, X[test_idx])
    z_bal, y_bal = smote_balance(z_train, y[train_idx], cfg.smote_k, rng=rng)
    tree = tree_fit(z_bal, y_bal, cfg.tree_max_depth, cfg.tree_min_leaf)
    return float(np.mean(tree_predict(tree, z_test) == y[test_idx]))


def _iteration_accuracies(ds: SegmentDataset, cfg: SelectionConfig, iteration: int) -> np.ndarray:
    seed = cfg.iteration_seed(iteration)
    plan = make_split(len(ds), Holdout(cfg.test_fraction), seed, labels=ds.y)
    X = ds.X.astype(np.float64)
    return np.array([
        accuracy_on_split(
            X[:, c], ds.y, plan.train_indices, plan.test_indices, cfg, stream(seed, "smote", c)
        )
        for c in range(X.shape[1])
    ])


def channel_accuracy(
    rec: EegRecording, channel: int, cfg: SelectionConfig, iteration_seed: int
) -> float:
    """Test accuracy of the classical pipeline trained on a single channel."""
    if not 0 <= channel < rec.num_channels:
        raise IndexError(f"channel {channel} out of range for {rec.num_channels} channels")
    ds = selection_dataset(rec, cfg)
    plan = make_split(len(ds), Holdout(cfg.test_fraction), iteration_seed, labels=ds.y)
    return accuracy_on_split(
        ds.X[:, channel].astype(np.float64), ds.y, plan.train_indices, plan.test_indices,
        cfg, stream(iteration_seed, "smote", channel),
    )


_WORKER_STATE: tuple | None = None


def _init_worker(ds, cfg):
    global _WORKER_STATE
    _WORKER_STATE = (ds, cfg)


def _run_iteration(iteration: int) -> np.ndarray:
    ds, cfg = _WORKER_STATE
    return _iteration_accuracies(ds, cfg, iteration)


def accuracy_matrix(ds: SegmentDataset, cfg: SelectionConfig) -> np.ndarray:
    """Per-iteration, per-channel test accuracies, shape [m x C]."""
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs, initializer=_init_worker, initargs=(ds, cfg)) as pool:
            rows = list(pool.map(_run_iteration, range(cfg.m)))
    else:
        rows = [_iteration_accuracies(ds, cfg, i) for i in range(cfg.m)]
    return np.vstack(rows)


def tally(acc: np.ndarray, k: int, channel_labels: Sequence[str] = ()) -> ChannelTally:
    """Vote per-iteration top-k sets into a final top-k selection.

    Ties inside an iteration and in the final count are broken by higher
    mean accuracy over all iterations, then by lower channel index.
    """
    m, n_ch = acc.shape
    if not 1 <= k <= n_ch:
        raise ValueError(f"k={k} must be between 1 and the channel count {n_ch}")
    mean = acc.mean(axis=0)
    index = np.arange(n_ch)
    counts = np.zeros(n_ch, dtype=np.int64)
    for row in acc:
        order = np.lexsort((index, -mean, -row))
        counts[order[:k]] += 1
    ranking = [int(c) for c in np.lexsort((index, -mean, -counts))]
    return ChannelTally(acc, counts, ranking[:k], list(channel_labels), ranking)


def select_channels(rec: EegRecording | SegmentDataset, cfg: SelectionConfig) -> ChannelTally:
    ds = rec if isinstance(rec, SegmentDataset) else selection_dataset(rec, cfg)
    if cfg.k > ds.X.shape[1]:
        raise ValueError(f"k={cfg.k} exceeds the {ds.X.shape[1]} available channels")
    return tally(accuracy_matrix(ds, cfg), cfg.k, ds.channel_labels)


def apply_channel_mask(rec: EegRecording, selected: Sequence[int]) -> EegRecording:
    selected = [int(c) for c in selected]
    if len(set(selected)) != len(selected):
        raise IndexError("duplicate channel in selection")
    for c in selected:
        if not 0 <= c < rec.num_channels:
            raise IndexError(f"channel {c} out of range for {rec.num_channels} channels")
    return replace(
        rec,
        channel_labels=[rec.channel_labels[c] for c in selected],
        samples=rec.samples[selected],
        annotations=list(rec.annotations),
    )


# ---------------------------------------------------------------------------
# report file


def format_report(t: ChannelTally, cfg: SelectionConfig | None = None) -> str:
    lines = []
    if cfg is not None:
        lines.append(f"# channel selection k={t.k} m={cfg.m} seed={cfg.seed} window_s={cfg.window_s:g}")
    lines.append("rank\tindex\tlabel\tmean_accuracy\tappearances\tselected")
    mean = t.mean_accuracy
    chosen = set(t.selected)
    for rank, c in enumerate(t.ranking, start=1):
        label = t.channel_labels[c] if t.channel_labels else str(c)
        lines.append(
            f"{rank}\t{c}\t{label}\t{mean[c]:.6f}\t{int(t.appearance_counts[c])}\t"
            f"{'yes' if c in chosen else 'no'}"
        )
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> list[str]:
    """Selected channel labels, in selection order."""
    selected = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#") or line.startswith("rank\t"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataError(f"malformed selection report line: {line!r}")
        if parts[5] == "yes":
            selected.append(parts[2])
    if not selected:
        raise DataError("selection report selects no channels")
    return selected
