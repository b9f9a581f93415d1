"""Network blocks: MLP, tactile conv encoder, point-set encoder, transformer.

Each block registers its parameters in a ParamStore at construction and
keeps its forward cache on the instance, so one instance serves one
forward/backward pair at a time; instantiate per worker for concurrent
rollouts on frozen parameters.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .layers import (ACTIVATIONS, attention_backward, attention_forward,
                     check_finite, conv2d_backward, conv2d_forward,
                     layernorm_backward, layernorm_forward, linear_backward,
                     linear_forward, relu_backward, relu_forward)
from .params import ParamStore


def sinusoidal_embedding(position, dim: int) -> np.ndarray:
    """Interleaved sin/cos at geometric frequencies, base 10000.

    position may be an int or an int array; output (dim,) or (n, dim).
    """
    if dim % 2:
        raise ConfigError(f"embedding dim must be even, got {dim}")
    pos = np.atleast_1d(np.asarray(position, dtype=float))
    i = np.arange(dim // 2)
    freq = 1.0 / 10000.0 ** (2.0 * i / dim)
    ang = pos[:, None] * freq[None, :]
    out = np.empty((len(pos), dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out[0] if np.isscalar(position) or np.ndim(position) == 0 else out


class MLP:
    """Affine stack; default tanh hidden activations and a linear output."""

    def __init__(self, store: ParamStore, name: str, dims,
                 activation: str = "tanh", out_activation=None):
        if len(dims) < 2:
            raise ConfigError(f"{name}: need at least input and output dims")
        self.store = store
        self.name = name
        self.dims = tuple(int(d) for d in dims)
        self.act = ACTIVATIONS[activation]
        self.out_act = ACTIVATIONS[out_activation]
        for i, (a, b) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            store.add(f"{name}.w{i}", (a, b))
            store.add(f"{name}.b{i}", (b,), init="zeros")
        self.cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        steps = []
        last = len(self.dims) - 2
        for i in range(last + 1):
            w = self.store.get(f"{self.name}.w{i}")
            b = self.store.get(f"{self.name}.b{i}")
            h, lin = linear_forward(h, w, b, name=f"{self.name}.w{i}")
            f, _ = self.act if i < last else self.out_act
            h, act = f(h)
            steps.append((lin, act))
        self.cache = steps
        return check_finite(self.name, h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self.cache is None:
            raise ConfigError(f"{self.name}: backward before forward")
        last = len(self.dims) - 2
        for i in reversed(range(last + 1)):
            lin, act = self.cache[i]
            _, bk = self.act if i < last else self.out_act
            dy = bk(dy, act)
            dy, dw, db = linear_backward(dy, lin)
            self.store.accumulate(f"{self.name}.w{i}", dw)
            self.store.accumulate(f"{self.name}.b{i}", db)
        return dy


class ConvEncoder:
    """Strided conv stack over stacked tactile images -> flat embedding."""

    def __init__(self, store: ParamStore, name: str, in_channels: int = 3,
                 channels=(8, 16), kernel: int = 3, stride: int = 2,
                 input_hw: int = 32, out_dim: int = 32):
        self.store = store
        self.name = name
        self.stride = stride
        self.channels = (in_channels,) + tuple(channels)
        hw = input_hw
        for i, (cin, cout) in enumerate(zip(self.channels[:-1], self.channels[1:])):
            store.add(f"{name}.k{i}", (cout, cin, kernel, kernel))
            store.add(f"{name}.kb{i}", (cout,), init="zeros")
            hw = (hw - kernel) // stride + 1
            if hw < 1:
                raise ConfigError(f"{name}: image collapsed at conv {i}")
        self.flat = self.channels[-1] * hw * hw
        store.add(f"{name}.w", (self.flat, out_dim))
        store.add(f"{name}.b", (out_dim,), init="zeros")
        self.cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        if h.ndim == 3:
            h = h[None]
        convs = []
        for i in range(len(self.channels) - 1):
            k = self.store.get(f"{self.name}.k{i}")
            b = self.store.get(f"{self.name}.kb{i}")
            h, ccache = conv2d_forward(h, k, b, self.stride, name=f"{self.name}.k{i}")
            h, acache = relu_forward(h)
            convs.append((ccache, acache))
        shape = h.shape
        flat = h.reshape(shape[0], -1)
        out, lin = linear_forward(flat, self.store.get(f"{self.name}.w"),
                                  self.store.get(f"{self.name}.b"),
                                  name=f"{self.name}.w")
        self.cache = (convs, shape, lin)
        return check_finite(self.name, out)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        convs, shape, lin = self.cache
        dflat, dw, db = linear_backward(dy, lin)
        self.store.accumulate(f"{self.name}.w", dw)
        self.store.accumulate(f"{self.name}.b", db)
        dh = dflat.reshape(shape)
        for i in reversed(range(len(convs))):
            ccache, acache = convs[i]
            dh = relu_backward(dh, acache)
            dh, dk, dkb = conv2d_backward(dh, ccache)
            self.store.accumulate(f"{self.name}.k{i}", dk)
            self.store.accumulate(f"{self.name}.kb{i}", dkb)
        return dh


class PointEncoder:
    """Shared per-point MLP, channelwise max-pool, linear head.

    The pooled value is a symmetric function of the points, so the embedding
    is permutation-invariant; gradients route through the argmax points.
    """

    def __init__(self, store: ParamStore, name: str, in_dim: int = 3,
                 widths=(64, 64), out_dim: int = 64):
        self.store = store
        self.name = name
        self.point_mlp = MLP(store, f"{name}.pp", (in_dim,) + tuple(widths),
                             activation="relu", out_activation="relu")
        store.add(f"{name}.w", (widths[-1], out_dim))
        store.add(f"{name}.b", (out_dim,), init="zeros")
        self.cache = None

    def forward(self, cloud: np.ndarray) -> np.ndarray:
        x = np.asarray(cloud, dtype=float)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        feats = self.point_mlp.forward(x)           # (b, n, c)
        arg = feats.argmax(axis=1)                   # (b, c)
        pooled = np.take_along_axis(feats, arg[:, None, :], axis=1)[:, 0, :]
        out, lin = linear_forward(pooled, self.store.get(f"{self.name}.w"),
                                  self.store.get(f"{self.name}.b"),
                                  name=f"{self.name}.w")
        self.cache = (feats.shape, arg, lin, squeeze)
        return check_finite(self.name, out[0] if squeeze else out)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        shape, arg, lin, squeeze = self.cache
        dy = np.atleast_2d(dy)
        dpool, dw, db = linear_backward(dy, lin)
        self.store.accumulate(f"{self.name}.w", dw)
        self.store.accumulate(f"{self.name}.b", db)
        dfeats = np.zeros(shape)
        np.put_along_axis(dfeats, arg[:, None, :], dpool[:, None, :], axis=1)
        dx = self.point_mlp.backward(dfeats)
        return dx[0] if squeeze else dx


class TransformerEncoder:
    """Post-LN encoder over a k-step feature sequence; last-token readout.

    forward() takes (batch, k, d_model) or (k, d_model), adds sinusoidal
    position embeddings, runs `depth` blocks of multi-head self-attention
    and a feed-forward sublayer (residual + layer norm each), then maps the
    final token to out_dim.
    """

    def __init__(self, store: ParamStore, name: str, d_model: int = 128,
                 heads: int = 4, depth: int = 2, k: int = 8,
                 ffn_mult: int = 4, out_dim: int = 6):
        if d_model % heads:
            raise ConfigError(f"{name}: d_model {d_model} not divisible by {heads}")
        self.store = store
        self.name = name
        self.d_model = d_model
        self.heads = heads
        self.depth = depth
        self.k = k
        for i in range(depth):
            p = f"{name}.b{i}"
            for part in ("wq", "wk", "wv", "wo"):
                store.add(f"{p}.{part}", (d_model, d_model))
                store.add(f"{p}.{part}b", (d_model,), init="zeros")
            store.add(f"{p}.ln1g", (d_model,), init="ones")
            store.add(f"{p}.ln1b", (d_model,), init="zeros")
            store.add(f"{p}.ffn_w1", (d_model, ffn_mult * d_model))
            store.add(f"{p}.ffn_b1", (ffn_mult * d_model,), init="zeros")
            store.add(f"{p}.ffn_w2", (ffn_mult * d_model, d_model))
            store.add(f"{p}.ffn_b2", (d_model,), init="zeros")
            store.add(f"{p}.ln2g", (d_model,), init="ones")
            store.add(f"{p}.ln2b", (d_model,), init="zeros")
        store.add(f"{name}.head_w", (d_model, out_dim))
        store.add(f"{name}.head_b", (out_dim,), init="zeros")
        self.pos = sinusoidal_embedding(np.arange(k), d_model)
        self.cache = None
        self.last_attention = []

    def forward(self, sequence: np.ndarray) -> np.ndarray:
        x = np.asarray(sequence, dtype=float)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[1] != self.k or x.shape[2] != self.d_model:
            raise ConfigError(
                f"{self.name}: expected sequence ({self.k}, {self.d_model}), "
                f"got {x.shape[1:]}")
        g = self.store.get
        x = x + self.pos[None]
        blocks = []
        self.last_attention = []
        for i in range(self.depth):
            p = f"{self.name}.b{i}"
            a, attn_cache = attention_forward(
                x, g(f"{p}.wq"), g(f"{p}.wqb"), g(f"{p}.wk"), g(f"{p}.wkb"),
                g(f"{p}.wv"), g(f"{p}.wvb"), g(f"{p}.wo"), g(f"{p}.wob"),
                self.heads, name=p)
            self.last_attention.append(attn_cache[4])
            x1, ln1_cache = layernorm_forward(x + a, g(f"{p}.ln1g"), g(f"{p}.ln1b"))
            h, ffn1 = linear_forward(x1, g(f"{p}.ffn_w1"), g(f"{p}.ffn_b1"),
                                     name=f"{p}.ffn_w1")
            h, act = relu_forward(h)
            f, ffn2 = linear_forward(h, g(f"{p}.ffn_w2"), g(f"{p}.ffn_b2"),
                                     name=f"{p}.ffn_w2")
            x, ln2_cache = layernorm_forward(x1 + f, g(f"{p}.ln2g"), g(f"{p}.ln2b"))
            blocks.append((attn_cache, ln1_cache, ffn1, act, ffn2, ln2_cache))
        out, head = linear_forward(x[:, -1, :], g(f"{self.name}.head_w"),
                                   g(f"{self.name}.head_b"),
                                   name=f"{self.name}.head_w")
        self.cache = (blocks, head, x.shape, squeeze)
        return check_finite(self.name, out[0] if squeeze else out)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        blocks, head, x_shape, squeeze = self.cache
        dy = np.atleast_2d(dy)
        dlast, dw, db = linear_backward(dy, head)
        self.store.accumulate(f"{self.name}.head_w", dw)
        self.store.accumulate(f"{self.name}.head_b", db)
        dx = np.zeros(x_shape)
        dx[:, -1, :] = dlast
        acc = self.store.accumulate
        for i in reversed(range(self.depth)):
            p = f"{self.name}.b{i}"
            attn_cache, ln1_cache, ffn1, act, ffn2, ln2_cache = blocks[i]
            dz, dg, dbta = layernorm_backward(dx, ln2_cache)
            acc(f"{p}.ln2g", dg)
            acc(f"{p}.ln2b", dbta)
            dh, dw2, db2 = linear_backward(dz, ffn2)
            acc(f"{p}.ffn_w2", dw2)
            acc(f"{p}.ffn_b2", db2)
            dh = relu_backward(dh, act)
            dx1_f, dw1, db1 = linear_backward(dh, ffn1)
            acc(f"{p}.ffn_w1", dw1)
            acc(f"{p}.ffn_b1", db1)
            dx1 = dz + dx1_f
            dres, dg1, db1n = layernorm_backward(dx1, ln1_cache)
            acc(f"{p}.ln1g", dg1)
            acc(f"{p}.ln1b", db1n)
            dx_attn, grads = attention_backward(dres, attn_cache)
            for nm, gval in zip(("wq", "wqb", "wk", "wkb", "wv", "wvb",
                                 "wo", "wob"), grads):
                acc(f"{p}.{nm}", gval)
            dx = dres + dx_attn
        return dx[0] if squeeze else dx
