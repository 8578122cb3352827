"""Binary CART classifier grown on Gini impurity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class Leaf:
    label: int
    class_counts: tuple[int, int]


@dataclass
class Split:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    impurity_decrease: float = 0.0
    n_features: int = 0


TreeNode = Union[Leaf, Split]


def gini(n_pos, n):
    p = n_pos / n
    return 2.0 * p * (1.0 - p)


def best_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1):
    """Best (feature, threshold, impurity decrease) over all midpoint candidates.

    Ties go to the lower feature index, then the lower threshold.  Returns
    None when no candidate respects ``min_leaf``.
    """
    n, n_feat = X.shape
    if n < 2 * min_leaf or n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order].astype(np.float64)

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    pos_left = np.cumsum(ys, axis=0)[:-1]
    pos_total = ys.sum(axis=0)
    pos_right = pos_total - pos_left
    weighted = (
        2.0 * pos_left * (n_left - pos_left) / n_left
        + 2.0 * pos_right * (n_right - pos_right) / n_right
    ) / n
    decrease = gini(pos_total[0], n) - weighted

    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    decrease = np.where(valid, decrease, -np.inf)
    flat = int(np.argmax(decrease.T))  # feature-major: lower feature, then lower threshold
    f, i = divmod(flat, n - 1)
    lo, hi = xs[i, f], xs[i + 1, f]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return f, float(thr), float(decrease[i, f])


def tree_fit(X, y, max_depth: int = 10, min_leaf: int = 5) -> TreeNode:
    """Greedy CART; grows until ``max_depth``, ``min_leaf`` or a pure node.

    Leaves predict the majority class (ties to class 0).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeMismatch("tree_fit expects X [n x d] and y [n]")
    if X.shape[0] < 1:
        raise ValueError("tree_fit needs at least one row")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary 0/1")
    n_feat = X.shape[1]

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        yy = y[idx]
        n_pos = int(yy.sum())
        counts = (idx.size - n_pos, n_pos)
        if depth >= max_depth or n_pos in (0, idx.size):
            return Leaf(int(counts[1] > counts[0]), counts)
        found = best_split(X[idx], yy, min_leaf)
        if found is None:
            return Leaf(int(counts[1] > counts[0]), counts)
        f, thr, dec = found
        go_left = X[idx, f] <= thr
        return Split(
            f, thr, grow(idx[go_left], depth + 1), grow(idx[~go_left], depth + 1), dec, n_feat
        )

    return grow(np.arange(X.shape[0]), 0)


def _n_features(tree: TreeNode) -> int | None:
    return tree.n_features if isinstance(tree, Split) else None


def tree_predict(tree: TreeNode, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    expected = _n_features(tree)
    if X.ndim != 2 or (expected is not None and X.shape[1] != expected):
        raise ShapeMismatch(f"tree expects {expected} features, got shape {X.shape}")
    out = np.empty(X.shape[0], dtype=np.int64)
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if isinstance(node, Leaf):
            out[idx] = node.label
            continue
        left = X[idx, node.feature_index] <= node.threshold
        stack.append((node.left, idx[left]))
        stack.append((node.right, idx[~left]))
    return out


def tree_depth(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))
