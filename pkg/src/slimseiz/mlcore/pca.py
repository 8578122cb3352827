from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import DegenerateInput, ShapeMismatch


@dataclass
class PcaModel:
    mean: np.ndarray  # [d]
    components: np.ndarray  # [n_components x d], orthonormal rows
    explained_variance: np.ndarray  # [n_components], non-increasing
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each row made positive
    pivot = np.abs(vectors).argmax(axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _top_eigh(sym: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    m = sym.shape[0]
    w, v = linalg.eigh(sym, subset_by_index=[m - q, m - 1], driver="evr")
    return w[::-1], v[:, ::-1]


def pca_fit(
    X: np.ndarray,
    n_components: int | None = None,
    variance_target: float = 0.95,
    max_components: int = 32,
) -> PcaModel:
    """Fit PCA from the eigendecomposition of the sample covariance.

    With ``n_components=None`` the smallest count reaching
    ``variance_target`` of the total variance is kept, capped at
    ``max_components``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeMismatch("pca_fit expects a 2-D matrix")
    n, d = X.shape
    if n < 2:
        raise DegenerateInput("pca_fit needs at least two rows")
    limit = min(n - 1, d)
    if n_components is None:
        q = min(max_components, limit)
    else:
        if not 1 <= n_components <= limit:
            raise ValueError(f"n_components must be in [1, {limit}], got {n_components}")
        q = n_components

    mean = X.mean(axis=0)
    Xc = X - mean
    total = float(np.einsum("ij,ij->", Xc, Xc) / (n - 1))
    if total <= 0.0:
        raise DegenerateInput("all features have zero variance")

    vectors = None
    if n < d:
        # Gram route: eigenvectors of Xc Xc^T map onto those of the covariance
        w, u = _top_eigh(Xc @ Xc.T / (n - 1), q)
        if w[-1] > 1e-10 * w[0]:
            vectors = (Xc.T @ u) / np.sqrt(w * (n - 1))
            vectors = vectors.T
    if vectors is None:
        w, v = _top_eigh(Xc.T @ Xc / (n - 1), q)
        vectors = v.T
    w = np.clip(w, 0.0, None)

    if n_components is None:
        reached = np.flatnonzero(np.cumsum(w) >= variance_target * total)
        keep = int(reached[0]) + 1 if reached.size else q
        w, vectors = w[:keep], vectors[:keep]

    return PcaModel(mean, _fix_signs(vectors), w, total)


def pca_transform(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.mean.size:
        raise ShapeMismatch(f"expected {model.mean.size} columns, got {X.shape[1]}")
    return (X - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, Z: np.ndarray) -> np.ndarray:
    return np.asarray(Z) @ model.components + model.mean
