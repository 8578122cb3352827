"""Differentiable ops on :class:`Tensor`.

Layouts: conv/pool ops take ``[batch, channels, time]``; the Mamba path works
time-major ``[batch, time, channels]``; ``linear`` acts on the last axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NoPositives, NonFinite, ShapeMismatch
from .tensor import Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------------------
# elementwise / reductions


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    return Tensor.from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    return Tensor.from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _const(b, a)
    return Tensor.from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor.from_op(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor.from_op(
        np.ascontiguousarray(x.data.transpose(axes)), (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for either sign
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1 - s),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor.from_op(
        x.data * s, (x,), lambda g: (g * s * (1 + x.data * (1 - s)),)
    )


def softplus(x: Tensor) -> Tensor:
    v = x.data
    out = np.logaddexp(0, v).astype(v.dtype)
    return Tensor.from_op(out, (x,), lambda g: (g * _sigmoid(v),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,))


# ---------------------------------------------------------------------------
# layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis; ``w`` is [d_out x d_in]."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input dim {x.shape[-1]} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: bias shape {b.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[1])
    out = x2 @ w.data.T
    if b is not None:
        out = out + b.data
    out = out.reshape(*lead, w.shape[0])

    def back(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w.data).reshape(x.shape)
        gw = g2.T @ x2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, back)


def conv1d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Cross-correlation of ``x`` [B x C_in x L] with ``w`` [C_out x C_in x K]."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    batch, c_in, length = x.shape
    c_out, _, k = w.shape
    padded = length + 2 * padding
    if k > padded or stride < 1:
        raise ShapeMismatch(f"conv1d: kernel {k} longer than padded input {padded}")
    l_out = (padded - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # [B, C_in, L_out, K]
    cols = win.transpose(0, 2, 1, 3).reshape(batch * l_out, c_in * k)
    wmat = w.data.reshape(c_out, c_in * k)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = np.ascontiguousarray(out.reshape(batch, l_out, c_out).transpose(0, 2, 1))

    def back(g):
        gf = g.transpose(0, 2, 1).reshape(batch * l_out, c_out)
        gw = (gf.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (gf @ wmat).reshape(batch, l_out, c_in, k).transpose(0, 2, 3, 1)
            gxp = np.zeros((batch, c_in, padded), dtype=x.dtype)
            span = stride * (l_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, :, j]
            gx = gxp[:, :, padding : padding + length]
        grads = (gx, gw)
        return grads if b is None else grads + (g.sum(axis=(0, 2)),)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, back)


def causal_depthwise_conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel causal conv over time for ``x`` [B x L x D], ``w`` [D x K]."""
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[0]:
        raise ShapeMismatch(f"depthwise conv: input {x.shape} vs weight {w.shape}")
    length = x.shape[1]
    k = w.shape[1]
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[:, j : j + length, :] * w.data[:, j]
    if b is not None:
        out += b.data

    def back(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gw[:, j] = np.einsum("bld,bld->d", g, xp[:, j : j + length, :])
            gxp[:, j : j + length, :] += g * w.data[:, j]
        grads = (gxp[:, k - 1 :, :], gw)
        return grads if b is None else grads + (g.sum(axis=(0, 1)),)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, back)


def maxpool1d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    """Max over sliding windows of the last axis; ties route to the first maximum."""
    stride = window if stride is None else stride
    if x.ndim != 3 or window < 1 or window > x.shape[2]:
        raise ShapeMismatch(f"maxpool1d: window {window} on input {x.shape}")
    length = x.shape[2]
    l_out = (length - window) // stride + 1
    if stride == window:
        # non-overlapping: branch-free max and first-maximum masks
        cut = x.data[:, :, : l_out * window].reshape(x.shape[0], x.shape[1], l_out, window)
        win = np.ascontiguousarray(np.moveaxis(cut, 3, 0))
        out = win.max(axis=0)
        first = np.empty(win.shape, dtype=bool)
        taken = np.zeros(out.shape, dtype=bool)
        for j in range(window):
            np.equal(win[j], out, out=first[j])
            first[j] &= ~taken
            taken |= first[j]

        def back(g):
            g4 = first * g
            gx = np.zeros_like(x.data)
            gx[:, :, : l_out * window] = np.moveaxis(g4, 0, 3).reshape(*cut.shape[:2], -1)
            return (gx,)

        return Tensor.from_op(out, (x,), back)
    win = sliding_window_view(x.data, window, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    pos = arg + (np.arange(l_out) * stride)

    def back(g):
        gx = np.zeros_like(x.data)
        if stride >= window:
            np.put_along_axis(gx, pos, g, axis=2)
        else:
            bi, ci, _ = np.indices(pos.shape)
            np.add.at(gx, (bi, ci, pos), g)
        return (gx,)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), back)


def global_avg_pool(x: Tensor, axis: int = -1) -> Tensor:
    """Mean over the time axis: [B x C x L] -> [B x C] by default."""
    if x.ndim != 3:
        raise ShapeMismatch(f"global_avg_pool expects rank 3, got {x.shape}")
    return mean(x, axis=axis)


# ---------------------------------------------------------------------------
# selective scan


def selective_scan(
    u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor
) -> Tensor:
    """Diagonal selective SSM recurrence, accumulated in float64.

    Shapes: ``u``, ``delta`` [b x L x d]; ``A`` [d x n]; ``B``, ``C`` [b x L x n];
    ``D`` [d].  With dA = exp(delta*A) and dBu = delta*B*u:
    ``h_t = dA_t * h_{t-1} + dBu_t``, ``y_t = <C_t, h_t> + D*u_t``.
    """
    bsz, length, d = u.shape
    n = A.shape[1]
    if delta.shape != u.shape or A.shape != (d, n) or B.shape != (bsz, length, n):
        raise ShapeMismatch("selective_scan: inconsistent shapes")
    if C.shape != B.shape or D.shape != (d,):
        raise ShapeMismatch("selective_scan: inconsistent shapes")
    f8 = np.float64
    # time-major float64 copies so each recurrence step touches contiguous memory
    u_, dt_, B_, C_ = (np.ascontiguousarray(t.data.transpose(1, 0, 2), dtype=f8) for t in (u, delta, B, C))
    A_, D_ = A.data.astype(f8), D.data.astype(f8)
    dA = np.exp(dt_[..., None] * A_)  # [L, b, d, n]
    dtu = dt_ * u_
    dBu = dtu[..., None] * B_[:, :, None, :]
    hs = np.empty_like(dA)
    h = np.zeros((bsz, d, n), dtype=f8)
    for t in range(length):
        h = dA[t] * h + dBu[t]
        hs[t] = h
    y = np.matmul(hs.reshape(-1, d, n), C_.reshape(-1, n, 1)).reshape(length, bsz, d)
    y += u_ * D_
    if not np.all(np.isfinite(y)):
        raise NonFinite("selective scan produced non-finite values")

    def back(g):
        g = np.ascontiguousarray(g.transpose(1, 0, 2), dtype=f8)
        gD = np.einsum("lbd,lbd->d", g, u_)
        gu = g * D_
        gC = np.matmul(g.reshape(-1, 1, d), hs.reshape(-1, d, n)).reshape(length, bsz, n)
        G = np.empty_like(hs)
        acc = np.zeros((bsz, d, n), dtype=f8)
        for t in range(length - 1, -1, -1):
            if t < length - 1:
                acc *= dA[t + 1]
            acc += g[t, :, :, None] * C_[t, :, None, :]
            G[t] = acc
        tmp = np.empty_like(hs)
        tmp[0] = 0.0
        np.multiply(G[1:], hs[:-1], out=tmp[1:])
        tmp *= dA
        g_dt = np.einsum("lbdn,dn->lbd", tmp, A_)
        gA = np.einsum("lbdn,lbd->dn", tmp, dt_)
        GB = np.matmul(G.reshape(-1, d, n), B_.reshape(-1, n, 1)).reshape(length, bsz, d)
        g_dt += GB * u_
        gu += GB * dt_
        gB = np.matmul(dtu.reshape(-1, 1, d), G.reshape(-1, d, n)).reshape(length, bsz, n)
        def swap(a):
            return np.ascontiguousarray(a.transpose(1, 0, 2), dtype=u.dtype)

        return swap(gu), swap(g_dt), gA.astype(u.dtype), swap(gB), swap(gC), gD.astype(u.dtype)

    y = y.transpose(1, 0, 2)
    return Tensor.from_op(np.ascontiguousarray(y, dtype=u.dtype), (u, delta, A, B, C, D), back)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def back(g):
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return ((grad * (float(g) / labels.size)).astype(logits.dtype),)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), back)


def supcon_loss(embeddings: Tensor, labels, temperature: float = 0.07) -> Tensor:
    """Supervised contrastive loss on L2-normalised embeddings.

    Anchors without a same-label partner are skipped; NoPositives if every
    anchor is skipped.
    """
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or labels.shape != (embeddings.shape[0],):
        raise ShapeMismatch(f"supcon: embeddings {embeddings.shape} vs labels {labels.shape}")
    e = embeddings.data.astype(np.float64)
    bsz = e.shape[0]
    norm = np.sqrt((e * e).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, 1e-12)
    z = e / norm
    s = z @ z.T / temperature
    off = ~np.eye(bsz, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    if not valid.any():
        raise NoPositives("no anchor has a same-label partner in the batch")
    s_masked = np.where(off, s, -np.inf)
    smax = s_masked.max(axis=1, keepdims=True)
    lse = smax[:, 0] + np.log(np.exp(s_masked - smax).sum(axis=1))
    mean_pos = np.where(valid, (s * pos).sum(axis=1) / np.maximum(n_pos, 1), 0.0)
    per_anchor = lse - mean_pos
    n_valid = int(valid.sum())
    loss = per_anchor[valid].sum() / n_valid

    def back(g):
        soft = np.exp(s_masked - lse[:, None])  # zero on the diagonal
        gs = soft - pos / np.maximum(n_pos, 1)[:, None]
        gs[~valid] = 0.0
        gs *= float(g) / n_valid
        gz = (gs + gs.T) @ z / temperature
        ge = (gz - z * (z * gz).sum(axis=1, keepdims=True)) / norm
        return (ge.astype(embeddings.dtype),)

    return Tensor.from_op(np.asarray(loss, dtype=embeddings.dtype), (embeddings,), back)
