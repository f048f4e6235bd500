"""Differentiable dense and sparse primitives.

Every function takes and returns :class:`Tensor` objects and records a
backward rule on the active tape.  Gradients with respect to sparse
adjacency values are not provided: adjacency is data, not a parameter.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, as_tensor, make_op
from .sparse import SparseMatrix

LN_EPS = 1e-5
LEAKY_SLOPE = 0.2


def _check_2d(name, x):
    if x.data.ndim != 2:
        raise ValueError(f"{name} expects a 2-D array, got shape {x.data.shape}")


def spmm(a: SparseMatrix, x: Tensor) -> Tensor:
    """Sparse-dense product ``A @ X``; backward is ``A.T @ grad``."""
    x = as_tensor(x)
    if a.shape[1] != x.data.shape[0]:
        raise ValueError(f"spmm shape mismatch: {a.shape} @ {x.data.shape}")
    a = a.astype(x.data.dtype) if x.data.dtype == np.float32 else a
    out = a.matmul(x.data)
    return make_op(out, (x,), lambda g: (a.T.matmul(g),))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {x.data.shape} @ {w.data.shape}")
    xd, wd = x.data, w.data

    def backward(g):
        return (g @ wd.T if x.requires_grad else None, xd.T @ g if w.requires_grad else None)

    return make_op(xd @ wd, (x, w), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    x, b = as_tensor(x), as_tensor(b)
    if b.data.shape != (x.data.shape[1],):
        raise ValueError(f"bias shape {b.data.shape} does not match {x.data.shape}")
    return make_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b``."""
    out = matmul(x, w)
    return out if b is None else add_bias(out, b)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    keep = out > 0
    return make_op(out, (x,), lambda g: (g * keep,))


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    dtype = x.data.dtype
    draw = rng.random(x.data.shape, dtype=np.float32 if dtype == np.float32 else np.float64)
    scale = (draw >= p).astype(dtype)
    scale *= dtype.type(1.0 / (1.0 - p))
    return make_op(x.data * scale, (x,), lambda g: (g * scale,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise each row to zero mean and unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    _check_2d("layer_norm", x)
    n = x.data.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = inv / n * (
            n * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_op(xhat * gd + bias.data, (x, gain, bias), backward)


def take_rows(x: Tensor, idx) -> Tensor:
    """Select rows; backward scatters the gradient back into place."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n_rows = x.data.shape[0]
    unique = np.unique(idx).size == idx.size

    def backward(g):
        full = np.zeros((n_rows,) + g.shape[1:], dtype=g.dtype)
        if unique:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(x.data[idx], (x,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood over the masked rows."""
    logits = as_tensor(logits)
    _check_2d("softmax_cross_entropy", logits)
    labels = np.asarray(labels)
    n = logits.data.shape[0]
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (n,) or labels.shape != (n,):
        raise ValueError("labels and mask need one entry per logit row")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("loss mask selects no rows")
    y = labels[rows].astype(np.int64)
    if y.min() < 0 or y.max() >= logits.data.shape[1]:
        raise ValueError("labels out of range for masked rows")
    z = logits.data[rows]
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(rows.size), y]
    loss = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def backward(g):
        p = np.exp(z - logsumexp[:, None])
        p[np.arange(rows.size), y] -= 1.0
        full = np.zeros_like(logits.data)
        full[rows] = p * (g / rows.size)
        return (full,)

    return make_op(loss, (logits,), backward)


def _segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    return np.add.reduceat(values, indptr[:-1], axis=0)


def gat_attention(
    z: Tensor,
    a_src: Tensor,
    a_dst: Tensor,
    adj: SparseMatrix,
    heads: int,
    concat: bool = True,
) -> Tensor:
    """Multi-head neighbourhood attention over a fixed sparsity pattern.

    ``z`` holds the projected features ``W h`` laid out as ``heads`` blocks
    of equal width.  Row ``i`` of ``adj`` lists the neighbours attended by
    node ``i`` (self-loops must already be present, so no row is empty).
    The coefficient on edge ``i <- j`` is the row-softmax of
    ``leaky_relu(a_dst . z_i + a_src . z_j)``.  Heads are concatenated or
    averaged.
    """
    z, a_src, a_dst = as_tensor(z), as_tensor(a_src), as_tensor(a_dst)
    n, width = z.data.shape
    if width % heads:
        raise ValueError(f"feature width {width} is not divisible by {heads} heads")
    f = width // heads
    if a_src.data.shape != (heads, f) or a_dst.data.shape != (heads, f):
        raise ValueError("attention vectors must have shape (heads, head_dim)")
    if adj.shape != (n, n):
        raise ValueError(f"adjacency shape {adj.shape} does not match {n} nodes")
    indptr, cols = adj.indptr, adj.indices
    if np.any(np.diff(indptr) == 0):
        raise ValueError("every node needs at least one neighbour (add self-loops)")
    rows = adj.row_ids()
    dtype = z.data.dtype

    z3 = z.data.reshape(n, heads, f)
    alpha, pos = _coefficients(z3, a_src.data, a_dst.data, adj, rows)
    alpha = alpha.astype(dtype)

    mats = [sp.csr_matrix((alpha[:, h], cols, indptr), shape=(n, n)) for h in range(heads)]
    out3 = np.empty_like(z3)
    for h, m in enumerate(mats):
        out3[:, h, :] = m @ z3[:, h, :]
    out = out3.reshape(n, width) if concat else out3.mean(axis=1)

    def backward(g):
        if concat:
            g3 = g.reshape(n, heads, f)
        else:
            g3 = np.broadcast_to((g / heads)[:, None, :], (n, heads, f))
        dz3 = np.zeros_like(z3)
        dalpha = np.empty_like(alpha)
        for h, m in enumerate(mats):
            gh = np.ascontiguousarray(g3[:, h, :])
            dz3[:, h, :] += m.T @ gh
            dalpha[:, h] = np.einsum("ef,ef->e", gh[rows], z3[cols, h, :])
        dl = alpha * (dalpha - _segment_sum(alpha * dalpha, indptr)[rows])
        de = dl * np.where(pos, 1.0, LEAKY_SLOPE).astype(dtype)
        ds_dst = _segment_sum(de, indptr)
        ds_src = np.stack(
            [np.bincount(cols, weights=de[:, h], minlength=n) for h in range(heads)], axis=1
        ).astype(dtype)
        dz3 += ds_dst[:, :, None] * a_dst.data[None] + ds_src[:, :, None] * a_src.data[None]
        da_dst = np.einsum("nh,nhf->hf", ds_dst, z3)
        da_src = np.einsum("nh,nhf->hf", ds_src, z3)
        return dz3.reshape(n, width), da_src, da_dst

    return make_op(out, (z, a_src, a_dst), backward)


def _coefficients(z3, a_src, a_dst, adj, rows):
    cols, indptr = adj.indices, adj.indptr
    e = np.einsum("nhf,hf->nh", z3, a_dst)[rows] + np.einsum("nhf,hf->nh", z3, a_src)[cols]
    pos = e > 0
    lk = np.where(pos, e, LEAKY_SLOPE * e)
    lk = lk - np.maximum.reduceat(lk, indptr[:-1], axis=0)[rows]
    ex = np.exp(lk)
    return ex / _segment_sum(ex, indptr)[rows], pos


def attention_weights(z: np.ndarray, a_src: np.ndarray, a_dst: np.ndarray, adj: SparseMatrix, heads: int):
    """Edge-aligned attention coefficients (shape ``nnz x heads``) for inspection."""
    n, width = z.shape
    z3 = z.reshape(n, heads, width // heads)
    return _coefficients(z3, a_src, a_dst, adj, adj.row_ids())[0]


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.data.shape != y.data.shape:
        raise ValueError("add expects equal shapes")
    return make_op(x.data + y.data, (x, y), lambda g: (g, g))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.data.shape
    return make_op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
