"""Named parameter store with gradient slots, plus Adam.

Parameters are plain float64 ndarrays. Every parameter gets a same-shape
gradient buffer at registration; backward passes accumulate into it and the
optimizer consumes and clears it. One writer at a time during optimization;
forward passes on frozen parameters are side-effect free.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError


class ParamStore:
    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.params = {}
        self.grads = {}

    def add(self, name: str, shape, init: str = "fan_in") -> np.ndarray:
        """Register a parameter; fan_in init is U(+-1/sqrt(fan_in)), zeros for biases."""
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "fan_in":
            fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:])) or 1
            bound = 1.0 / np.sqrt(fan_in)
            value = self.rng.uniform(-bound, bound, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        self.params[name] = value
        self.grads[name] = np.zeros(shape)
        return value

    def get(self, name: str) -> np.ndarray:
        return self.params[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name!r}")
        self.grads[name] += g

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy_values(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_values(self, values: dict) -> None:
        for k, v in values.items():
            if k not in self.params:
                raise ConfigError(f"unknown parameter {k!r}")
            if self.params[k].shape != v.shape:
                raise ConfigError(f"shape mismatch for {k!r}: "
                                  f"{self.params[k].shape} vs {v.shape}")
            self.params[k][...] = v


class Adam:
    """Standard Adam over a ParamStore; step() consumes and clears gradients."""

    def __init__(self, store: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self, max_grad_norm: float | None = None) -> float:
        """One update; returns the global gradient norm (pre-clipping)."""
        self.t += 1
        gnorm = np.sqrt(sum(float((g * g).sum())
                            for g in self.store.grads.values()))
        scale = 1.0
        if max_grad_norm is not None and gnorm > max_grad_norm > 0:
            scale = max_grad_norm / gnorm
        for k, p in self.store.params.items():
            if k not in self.m:  # parameters added after optimizer creation
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            g = self.store.grads[k] * scale
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        self.store.zero_grads()
        return gnorm
