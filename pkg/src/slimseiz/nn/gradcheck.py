"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(
    fn: Callable[[], Tensor], target: Tensor, eps: float, indices=None
) -> np.ndarray:
    """d fn() / d target by central differences (optionally on a subset of flat indices)."""
    flat = target.data.reshape(-1)
    grad = np.zeros(flat.size)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        plus = float(fn().data)
        flat[i] = orig - eps
        minus = float(fn().data)
        flat[i] = orig
        grad[i] = (plus - minus) / (2 * eps)
    return grad.reshape(target.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a||, ||n||), the usual tensor-level gradient check metric."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Relative error of the tape gradient vs central differences, per input.

    With ``max_entries`` only a random subset of each input's entries is
    probed and compared.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    errors = []
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        if max_entries is not None and t.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            picks = np.sort(rng.choice(t.data.size, max_entries, replace=False))
            numeric = numerical_grad(fn, t, eps, picks).ravel()[picks]
            errors.append(relative_error(analytic.ravel()[picks], numeric))
        else:
            errors.append(relative_error(analytic, numerical_grad(fn, t, eps)))
    return errors
