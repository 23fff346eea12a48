"""Differentiable ops used by CP-Net.

Each op takes :class:`Value` (or array) inputs, computes the forward result with
numpy and registers a backward closure. Integer index arguments (neighbour
lists, gather indices, labels) are constants: no gradient flows into them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Value, as_value, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear algebra

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), "add", backward)


def neg(a) -> Value:
    a = as_value(a)
    return make_node(-a.data, (a,), "neg", lambda g: a.accumulate(-g))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), "mul", backward)


def square(a) -> Value:
    a = as_value(a)
    return make_node(a.data * a.data, (a,), "square", lambda g: a.accumulate(2.0 * a.data * g))


def matmul(a, b) -> Value:
    """``a @ b`` for a 2-D right operand; ``a`` may carry leading batch axes."""
    a, b = as_value(a), as_value(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))

    return make_node(a.data @ b.data, (a, b), "matmul", backward)


def linear(x, weight, bias) -> Value:
    """Affine map over the last axis: ``x @ weight + bias``."""
    x, weight, bias = as_value(x), as_value(weight), as_value(bias)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"shape mismatch: input width {x.shape[-1]} vs weight {weight.shape}")

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate(x.data.reshape(-1, x.shape[-1]).T @ g2)
        if bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))

    return make_node(x.data @ weight.data + bias.data, (x, weight, bias), "linear", backward)


def relu(x) -> Value:
    x = as_value(x)
    out = np.maximum(x.data, 0).astype(x.dtype, copy=False)
    return make_node(out, (x,), "relu", lambda g: x.accumulate(g * (out > 0)))


def reduce_sum(x, axis=None) -> Value:
    x = as_value(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape))

    return make_node(x.data.sum(axis=axis), (x,), "sum", backward)


def reshape(x, shape) -> Value:
    x = as_value(x)
    return make_node(x.data.reshape(shape), (x,), "reshape", lambda g: x.accumulate(g.reshape(x.shape)))


def concat(values: Sequence, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for v, part in zip(values, np.split(g, splits, axis=axis)):
            v.accumulate(part)

    return make_node(np.concatenate([v.data for v in values], axis=axis), values, "concat", backward)


# ---------------------------------------------------------------------------
# reductions and index ops

def max_reduce(x, axis: int) -> Value:
    """Max along ``axis``; the gradient goes to the first maximal entry only."""
    x = as_value(x)
    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        x.accumulate(full)

    return make_node(np.squeeze(out, axis), (x,), "max", backward)


def global_max_pool(x) -> Value:
    """Column max over the points axis: ``(n, d) -> (d,)`` or ``(B, n, d) -> (B, d)``."""
    x = as_value(x)
    return max_reduce(x, axis=x.ndim - 2)


def _flat_rows(indices: np.ndarray, n: int) -> np.ndarray:
    """Row ids into a (B*n, ...) view for per-batch ``indices`` of shape (B, ...)."""
    offsets = (np.arange(indices.shape[0]) * n).reshape((-1,) + (1,) * (indices.ndim - 1))
    return indices + offsets


def _scatter_matrix(rows: np.ndarray, n_rows: int, dtype) -> sp.csr_matrix:
    """Sparse (n_rows, E) matrix that sums edge rows into their source rows."""
    e = rows.size
    return sp.csr_matrix((np.ones(e, dtype=dtype), (rows.ravel(), np.arange(e))), shape=(n_rows, e))


def gather_rows(x, indices) -> Value:
    """Differentiable row gather.

    ``x`` is ``(n, c)`` with ``indices`` ``(k,)``, or ``(B, n, c)`` with ``(B, k)``.
    Backward scatter-adds, so repeated indices accumulate.
    """
    x = as_value(x)
    indices = np.asarray(indices, dtype=np.int64)
    n = x.shape[-2]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")
    if x.ndim == 2:
        rows = indices
    elif x.ndim == 3 and indices.ndim == 2 and indices.shape[0] == x.shape[0]:
        rows = _flat_rows(indices, n)
    else:
        raise ValueError(f"incompatible gather shapes {x.shape} and {indices.shape}")
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)

    def backward(g):
        scatter = _scatter_matrix(rows, flat.shape[0], x.dtype)
        x.accumulate(np.asarray(scatter @ g.reshape(-1, c)).reshape(x.shape))

    return make_node(flat[rows], (x,), "gather", backward)


# ---------------------------------------------------------------------------
# EdgeConv kernels

def edge_features(x, neighbors) -> Value:
    """Triple-kernel edge features ``[x_i, x_j - x_i, (x_j - x_i)^2]``, shape (B, n, K, 3c).

    Reference path; :func:`edge_linear` computes the same affine map without
    materializing this tensor.
    """
    x = as_value(x)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    B, n, c = x.shape
    K = neighbors.shape[-1]
    xj = gather_rows(x, neighbors.reshape(B, n * K))
    xj = reshape(xj, (B, n, K, c))
    xi = reshape(x, (B, n, 1, c))
    xi_b = add(xi, Value(np.zeros((1, 1, K, 1), dtype=x.dtype)))
    diff = add(xj, neg(xi))
    return concat([xi_b, diff, square(diff)], axis=-1)


def _edge_linear_forward(x: np.ndarray, neighbors: np.ndarray, weight: np.ndarray,
                         bias: np.ndarray):
    B, n, c = x.shape
    if weight.shape[0] != 3 * c:
        raise ValueError(f"shape mismatch: EdgeConv weight {weight.shape} for input width {c}")
    c_out = weight.shape[1]
    w_center, w_offset, w_square = weight[:c], weight[c:2 * c], weight[2 * c:]
    rows = _flat_rows(neighbors, n)  # (B, n, K)
    flat = x.reshape(B * n, c)
    diff = flat[rows] - x[:, :, None, :]  # (B, n, K, c)
    diff_sq = diff * diff
    per_point = x @ (w_center - w_offset)  # (B, n, c_out)
    per_neighbor = (x @ w_offset).reshape(B * n, c_out)[rows]
    out = diff_sq @ w_square
    out += per_neighbor
    out += per_point[:, :, None, :]
    out += bias
    return out, (rows, flat, diff, diff_sq)


def _edge_linear_backward(g: np.ndarray, ctx, x: Value, weight: Value, bias: Value):
    rows, flat, diff, diff_sq = ctx
    B, n, K, c_out = g.shape
    c = flat.shape[1]
    w_center, w_offset, w_square = weight.data[:c], weight.data[c:2 * c], weight.data[2 * c:]
    E = B * n * K
    g_edges = g.reshape(E, c_out)
    g_center = g.sum(axis=2).reshape(B * n, c_out)
    scatter = _scatter_matrix(rows, B * n, g.dtype)
    g_source = np.asarray(scatter @ g_edges)  # edge grads summed onto neighbour rows
    if bias.requires_grad:
        bias.accumulate(g_center.sum(axis=0))
    if weight.requires_grad:
        xt = flat.T
        gw = np.empty_like(weight.data)
        gw[:c] = xt @ g_center
        gw[c:2 * c] = xt @ g_source - gw[:c]
        gw[2 * c:] = diff_sq.reshape(E, c).T @ g_edges
        weight.accumulate(gw)
    if x.requires_grad:
        g_diff = g @ w_square.T  # (B, n, K, c)
        g_diff *= diff
        g_diff *= 2.0
        gx = g_center @ (w_center - w_offset).T + g_source @ w_offset.T
        gx += np.asarray(scatter @ g_diff.reshape(E, c))
        gx -= g_diff.sum(axis=2).reshape(B * n, c)
        x.accumulate(gx.reshape(x.shape))


def edge_linear(x, neighbors, weight, bias) -> Value:
    """Affine map of triple-kernel edge features, shape (B, n, K, c_out).

    ``weight`` is (3c, c_out) with row blocks for the centre, offset and squared
    offset slices. The centre/offset terms are computed per point and gathered;
    only the squared-offset product is evaluated per edge.
    """
    x, weight, bias = as_value(x), as_value(weight), as_value(bias)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    out, ctx = _edge_linear_forward(x.data, neighbors, weight.data, bias.data)
    return make_node(out, (x, weight, bias), "edge_linear",
                     lambda g: _edge_linear_backward(g, ctx, x, weight, bias))


def edge_conv(x, neighbors, weight, bias, gamma, beta, state: "BatchNormState",
              training: bool) -> Value:
    """Fused EdgeConv: edge affine map -> batch norm -> ReLU -> max over neighbours.

    Equal to ``max_reduce(relu(batch_norm(edge_linear(...))), axis=2)``. Batch
    norm is a per-channel affine map and ReLU is monotone, so the neighbour max
    is taken on the pre-activations (the max where the channel slope is >= 0, the
    min where it is negative) instead of on the full normalized edge tensor.
    """
    x, weight, bias = as_value(x), as_value(weight), as_value(bias)
    gamma, beta = as_value(gamma), as_value(beta)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    z, ctx = _edge_linear_forward(x.data, neighbors, weight.data, bias.data)
    B, n, K, c_out = z.shape
    count = B * n * K
    if training:
        z2 = z.reshape(count, c_out)
        mean = z2.mean(axis=0)
        var = z2.var(axis=0)
        m = state.momentum
        state.mean = (m * state.mean + (1.0 - m) * mean).astype(state.mean.dtype)
        state.var = (m * state.var + (1.0 - m) * var).astype(state.var.dtype)
    else:
        mean, var = state.mean, state.var
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(z.dtype)
    slope = gamma.data * inv_std
    positive = slope >= 0
    z_sel = np.where(positive, z.max(axis=2), z.min(axis=2))  # (B, n, c_out)
    xhat_sel = (z_sel - mean) * inv_std
    pre = xhat_sel * gamma.data + beta.data
    out = np.maximum(pre, 0).astype(z.dtype)

    def backward(g):
        g_pre = g * (pre > 0)
        g2 = g_pre.reshape(-1, c_out)
        if beta.requires_grad:
            beta.accumulate(g2.sum(axis=0))
        if gamma.requires_grad:
            gamma.accumulate((g2 * xhat_sel.reshape(g2.shape)).sum(axis=0))
        if not (x.requires_grad or weight.requires_grad or bias.requires_grad):
            return
        g_xhat = g_pre * gamma.data  # nonzero only on each channel's winning edge
        if training:
            s1 = g_xhat.reshape(-1, c_out).sum(axis=0) / count
            s2 = (g_xhat * xhat_sel).reshape(-1, c_out).sum(axis=0) / count
            # dense part inv*(-s1 - xhat*s2), written as an affine map of z
            scale = -(inv_std * inv_std * s2)
            shift = inv_std * (-s1 + mean * inv_std * s2)
            gz = z * scale.astype(z.dtype)
            gz += shift.astype(z.dtype)
        else:
            gz = np.zeros_like(z)
        # first neighbour (lowest k) attaining the selected value gets the sparse part
        small = np.int8 if K < 128 else np.int32
        hits = (z == z_sel[:, :, None, :]).astype(small)
        hits *= np.arange(K, 0, -1, dtype=small)[None, None, :, None]
        pos = (K - hits.max(axis=2))[:, :, None, :]
        picked = np.take_along_axis(gz, pos, axis=2)
        picked += (g_xhat * inv_std)[:, :, None, :]
        np.put_along_axis(gz, pos, picked, axis=2)
        _edge_linear_backward(gz, ctx, x, weight, bias)

    return make_node(out, (x, weight, bias, gamma, beta), "edge_conv", backward)


# ---------------------------------------------------------------------------
# normalization, regularization, loss

@dataclass
class BatchNormState:
    """Running statistics; ``momentum`` is the decay applied to the old value."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5):
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype), momentum, eps)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool) -> Value:
    """Normalize over every axis except the last (feature) axis."""
    x, gamma, beta = as_value(x), as_value(gamma), as_value(beta)
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.mean = (m * state.mean + (1.0 - m) * mean).astype(state.mean.dtype)
        state.var = (m * state.var + (1.0 - m) * var).astype(state.var.dtype)
    else:
        mean, var = state.mean, state.var
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    xhat = (x.data - mean) * inv_std
    out = xhat * gamma.data + beta.data
    count = x.data.size // x.shape[-1]

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if gamma.requires_grad:
            gamma.accumulate((g2 * xhat.reshape(g2.shape)).sum(axis=0))
        if beta.requires_grad:
            beta.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gxhat = g * gamma.data
            if training:
                s1 = gxhat.sum(axis=axes)
                s2 = (gxhat * xhat).sum(axis=axes)
                x.accumulate(inv_std * (gxhat - s1 / count - xhat * (s2 / count)))
            else:
                x.accumulate(gxhat * inv_std)

    return make_node(out.astype(x.dtype), (x, gamma, beta), "batch_norm", backward)


def dropout(x, p: float, rng: Optional[np.random.Generator], training: bool) -> Value:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)``; identity in eval mode."""
    x = as_value(x)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return make_node(x.data * keep, (x,), "dropout", lambda g: x.accumulate(g * keep))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels) -> Value:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = as_value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("logits must be (B, C) with one label per row")
    B = logits.shape[0]
    logp = log_softmax(logits.data)
    loss = -logp[np.arange(B), labels].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(B), labels] -= 1.0
        logits.accumulate(grad * (g / B))

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), "softmax_ce", backward)
