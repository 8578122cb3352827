from __future__ import annotations

import numpy as np

from ..errors import TooFewMinority
from ..rng import stream


def nearest_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows (Euclidean), ties to lower index."""
    sq = np.einsum("ij,ij->i", X, X)
    dist = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def smote(
    X_min: np.ndarray,
    n_synthetic: int,
    k_neighbors: int = 5,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Synthetic minority rows interpolated towards random k-nearest neighbours.

    Base rows are visited round-robin; each synthetic row is
    ``x_i + u * (x_j - x_i)`` with ``u ~ U[0, 1]``.
    """
    X_min = np.asarray(X_min, dtype=np.float64)
    n_min = X_min.shape[0]
    if n_min < 2:
        raise TooFewMinority(f"SMOTE needs at least 2 minority rows, got {n_min}")
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be >= 1")
    if n_synthetic <= 0:
        return np.empty((0, X_min.shape[1]))
    rng = rng if rng is not None else stream(seed, "smote")
    k = min(k_neighbors, n_min - 1)
    nbrs = nearest_neighbors(X_min, k)

    base = np.arange(n_synthetic) % n_min
    pick = nbrs[base, rng.integers(0, k, size=n_synthetic)]
    gap = rng.random(n_synthetic)[:, None]
    return X_min[base] + gap * (X_min[pick] - X_min[base])


def smote_balance(
    X: np.ndarray,
    y: np.ndarray,
    k_neighbors: int = 5,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Oversample the smaller class of a binary problem up to parity."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2 or counts[0] == counts[1]:
        return np.asarray(X, dtype=np.float64), y
    minority = classes[np.argmin(counts)]
    extra = smote(X[y == minority], int(counts.max() - counts.min()), k_neighbors, seed, rng)
    return (
        np.vstack([X, extra]),
        np.concatenate([y, np.full(extra.shape[0], minority, dtype=y.dtype)]),
    )
