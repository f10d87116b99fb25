"""Differentiable primitives.

Every function takes :class:`Tensor` operands (plain arrays and scalars are
promoted) and returns a new tensor whose backward closure produces the exact
analytic gradient for each parent.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, make_result, record_macs


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward)


def multiply(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _check_broadcast("multiply", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def divide(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _check_broadcast("divide", a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return multiply(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    out = np.matmul(a.data, b.data)
    record_macs(int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in_features, out_features)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# -- shape manipulation ------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return make_result(np.transpose(x.data, axes), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def slice(x: Tensor, idx) -> Tensor:  # noqa: A001
    out = x.data[idx]
    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(np.array(out, copy=True), (x,), backward)


# -- nonlinearities ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return make_result(y, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return make_result(y, (x,), backward)


def softmax_array(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = softmax_array(x.data, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return multiply(x, Tensor(keep))


# -- losses --------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels, weight=None) -> Tensor:
    """Mean (optionally class-weighted) negative log-likelihood of ``labels``.

    With ``weight`` the mean is ``sum(w[y_i] * nll_i) / sum(w[y_i])``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    rows = np.arange(z.shape[0])
    nll = logsum[:, 0] - z[rows, labels]
    if weight is None:
        w = np.ones(z.shape[0], dtype=z.dtype)
    else:
        w = np.asarray(weight, dtype=z.dtype)[labels]
    denom = w.sum()
    loss = np.asarray((w * nll).sum() / denom, dtype=z.dtype)

    def backward(g):
        p = np.exp(z - logsum)
        p[rows, labels] -= 1.0
        return (p * (w / denom)[:, None] * g,)

    return make_result(loss, (logits,), backward)


# -- convolution and pooling ---------------------------------------------------------

def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, C_in, L) with ``weight`` (C_out, C_in, K)."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    B, C_in, L = x.shape
    C_out, _, K = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    Lp = xp.shape[2]
    if Lp < K:
        raise ShapeError(f"conv1d: padded length {Lp} shorter than kernel {K}")
    L_out = (Lp - K) // stride + 1
    win = sliding_window_view(xp, K, axis=2)[:, :, : (L_out - 1) * stride + 1 : stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * L_out, C_in * K)
    wmat = weight.data.reshape(C_out, C_in * K)
    out = (cols @ wmat.T).reshape(B, L_out, C_out).transpose(0, 2, 1)
    record_macs(B * C_out * L_out * C_in * K)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gflat = g.transpose(0, 2, 1).reshape(B * L_out, C_out)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gflat.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = (gflat @ wmat).reshape(B, L_out, C_in, K)
            gxp = np.zeros((B, C_in, Lp), dtype=x.dtype)
            span = (L_out - 1) * stride + 1
            for k in range(K):
                gxp[:, :, k : k + span : stride] += dcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, padding : padding + L] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def global_average_pool(x: Tensor) -> Tensor:
    """Average over the last axis: (B, C, L) -> (B, C)."""
    return mean(x, axis=-1)


# -- normalisation -------------------------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of (B, C) or (B, C, L) input.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the stored statistics make this a fixed
    affine map.
    """
    if x.ndim not in (2, 3) or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm: input {x.shape} incompatible with {gamma.shape[0]} channels")
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // x.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            m = x.data.size // x.shape[1]
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx.astype(x.dtype, copy=False), gg, gbeta

    return make_result(out, (x, gamma, beta), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if x.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"layer_norm: input {x.shape} incompatible with {gamma.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]
    red = tuple(range(x.ndim - 1))

    def backward(g):
        gxhat = g * gamma.data
        gx = (inv / d) * (
            d * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_result(out, (x, gamma, beta), backward)


# -- recurrence ------------------------------------------------------------------

def lstm(x_proj: Tensor, w_hh: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over pre-projected inputs.

    Args:
        x_proj: (B, T, 4H) input contributions ``x_t @ W_ih + b`` with gate
            blocks ordered input, forget, cell, output.
        w_hh: (H, 4H) recurrent weights.
        reverse: process the sequence from the last step to the first.

    Returns:
        (B, T, H) hidden states aligned with the input time axis. Initial
        hidden and cell states are zero.
    """
    if x_proj.ndim != 3 or w_hh.ndim != 2 or w_hh.shape[1] != 4 * w_hh.shape[0] or x_proj.shape[2] != w_hh.shape[1]:
        raise ShapeError(f"lstm: inputs {x_proj.shape} incompatible with recurrent weights {w_hh.shape}")
    B, T, G = x_proj.shape
    H = G // 4
    xs = x_proj.data[:, ::-1] if reverse else x_proj.data
    W = w_hh.data
    dt = x_proj.dtype
    gates = np.empty((T, B, G), dtype=dt)
    cells = np.empty((T + 1, B, H), dtype=dt)
    hs = np.empty((T + 1, B, H), dtype=dt)
    tanh_c = np.empty((T, B, H), dtype=dt)
    cells[0] = 0.0
    hs[0] = 0.0
    for t in range(T):
        z = xs[:, t] + hs[t] @ W
        a = gates[t]
        a[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        a[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        a[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        cells[t + 1] = a[:, H : 2 * H] * cells[t] + a[:, :H] * a[:, 2 * H : 3 * H]
        tanh_c[t] = np.tanh(cells[t + 1])
        hs[t + 1] = a[:, 3 * H :] * tanh_c[t]
    record_macs(T * B * H * G)
    out = hs[1:].transpose(1, 0, 2)
    if reverse:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)

    def backward(g):
        g = g[:, ::-1] if reverse else g
        gx = np.empty((B, T, G), dtype=dt)
        gW = np.zeros_like(W)
        dh_next = np.zeros((B, H), dtype=dt)
        dc_next = np.zeros((B, H), dtype=dt)
        for t in range(T - 1, -1, -1):
            a = gates[t]
            i, f, c_hat, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            dh = g[:, t] + dh_next
            tc = tanh_c[t]
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = gx[:, t]
            dz[:, :H] = dc * c_hat * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * cells[t] * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - c_hat * c_hat)
            dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            gW += hs[t].T @ dz
            dh_next = dz @ W.T
        if reverse:
            gx = gx[:, ::-1]
        return np.ascontiguousarray(gx), gW

    return make_result(out, (x_proj, w_hh), backward)
