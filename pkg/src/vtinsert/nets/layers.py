"""Differentiable primitives: explicit forward caches, hand-written backwards.

Every forward returns (output, cache); the matching backward consumes the
cache and the upstream gradient and returns input/parameter gradients. All
math is plain numpy; there is no hidden randomness anywhere in a forward
pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError


def check_finite(name, x):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values out of {name}")
    return x


def linear_forward(x, w, b, name="linear"):
    """x (..., in) @ w (in, out) + b (out,)."""
    if x.shape[-1] != w.shape[0]:
        raise ConfigError(f"{name}: input dim {x.shape[-1]} != weight dim {w.shape[0]}")
    y = x @ w + b
    return y, (x, w)


def linear_backward(dy, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, cache):
    return dy * (1.0 - cache * cache)


def relu_forward(x):
    y = np.maximum(x, 0.0)
    return y, x


def relu_backward(dy, cache):
    return dy * (cache > 0.0)


ACTIVATIONS = {
    "tanh": (tanh_forward, tanh_backward),
    "relu": (relu_forward, relu_backward),
    None: (lambda x: (x, None), lambda dy, cache: dy),
    "linear": (lambda x: (x, None), lambda dy, cache: dy),
}


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    """Jacobian-vector product of softmax given its output y."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(dy, cache):
    xhat, inv, gamma = cache
    n = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbeta = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _im2col(x, kh, kw, stride):
    """x (b, c, h, w) -> columns (b, oh*ow, c*kh*kw), valid padding."""
    b, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3))
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(dcols, x_shape, kh, kw, stride):
    """Adjoint of _im2col: scatter-add columns back onto the input grid."""
    b, c, h, w = x_shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    dx = np.zeros(x_shape)
    d = dcols.reshape(b, oh, ow, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def conv2d_forward(x, k, b, stride=1, name="conv"):
    """x (batch, c, h, w), k (filters, c, kh, kw) -> (batch, filters, oh, ow)."""
    if x.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ConfigError(f"{name}: expected {k.shape[1]} input channels, "
                          f"got shape {x.shape}")
    f, _, kh, kw = k.shape
    cols, oh, ow = _im2col(x, kh, kw, stride)
    y = cols @ k.reshape(f, -1).T + b
    y = y.reshape(x.shape[0], oh, ow, f).transpose(0, 3, 1, 2)
    return y, (cols, x.shape, k, stride)


def conv2d_backward(dy, cache):
    cols, x_shape, k, stride = cache
    f, c, kh, kw = k.shape
    dy2 = dy.transpose(0, 2, 3, 1).reshape(dy.shape[0], -1, f)
    dk = np.einsum("bpf,bpk->fk", dy2, cols).reshape(k.shape)
    db = dy2.sum(axis=(0, 1))
    dcols = dy2 @ k.reshape(f, -1)
    dx = _col2im(dcols, x_shape, kh, kw, stride)
    return dx, dk, db


def attention_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, heads, name="attn"):
    """Multi-head self-attention on x (batch, k, d); returns (out, cache).

    cache includes the attention weights for inspection; each row sums to 1.
    """
    bsz, k, d = x.shape
    if d % heads:
        raise ConfigError(f"{name}: d_model {d} not divisible by {heads} heads")
    dh = d // heads

    def split(t):
        return t.reshape(bsz, k, heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ wq + bq)
    key = split(x @ wk + bk)
    v = split(x @ wv + bv)
    scores = q @ key.transpose(0, 1, 3, 2) / np.sqrt(dh)
    attn = softmax(scores, axis=-1)
    ctx = attn @ v
    ctx2 = ctx.transpose(0, 2, 1, 3).reshape(bsz, k, d)
    out = ctx2 @ wo + bo
    return out, (x, q, key, v, attn, ctx2, wq, wk, wv, wo, heads)


def attention_backward(dy, cache):
    x, q, key, v, attn, ctx2, wq, wk, wv, wo, heads = cache
    bsz, k, d = x.shape
    dh = d // heads

    def split(t):
        return t.reshape(bsz, k, heads, dh).transpose(0, 2, 1, 3)

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(bsz, k, d)

    x2 = x.reshape(-1, d)
    dwo = ctx2.reshape(-1, d).T @ dy.reshape(-1, d)
    dbo = dy.reshape(-1, d).sum(axis=0)
    dctx = split(dy @ wo.T)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dattn, attn) / np.sqrt(dh)
    dq = dscores @ key
    dkey = dscores.transpose(0, 1, 3, 2) @ q

    dq2, dk2, dv2 = merge(dq).reshape(-1, d), merge(dkey).reshape(-1, d), \
        merge(dv).reshape(-1, d)
    dwq, dbq = x2.T @ dq2, dq2.sum(axis=0)
    dwk, dbk = x2.T @ dk2, dk2.sum(axis=0)
    dwv, dbv = x2.T @ dv2, dv2.sum(axis=0)
    dx = (dq2 @ wq.T + dk2 @ wk.T + dv2 @ wv.T).reshape(bsz, k, d)
    return dx, (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)
