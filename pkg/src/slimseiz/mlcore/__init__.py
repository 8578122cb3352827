"""Classical ML primitives used by channel selection."""

from .metrics import MetricsReport, compute_metrics
from .pca import PcaModel, pca_fit, pca_inverse_transform, pca_transform
from .smote import nearest_neighbors, smote, smote_balance
from .tree import Leaf, Split, TreeNode, best_split, tree_depth, tree_fit, tree_predict

__all__ = [
    "Leaf",
    "MetricsReport",
    "PcaModel",
    "Split",
    "TreeNode",
    "best_split",
    "compute_metrics",
    "nearest_neighbors",
    "pca_fit",
    "pca_inverse_transform",
    "pca_transform",
    "smote",
    "smote_balance",
    "tree_depth",
    "tree_fit",
    "tree_predict",
]
