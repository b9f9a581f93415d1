"""Central finite-difference verification of every block's backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import MLP, ConvEncoder, PointEncoder, TransformerEncoder
from .params import ParamStore

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class BlockReport:
    name: str
    max_rel_err: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


@dataclass
class GradCheckReport:
    blocks: list

    @property
    def max_rel_err(self) -> float:
        return max(b.max_rel_err for b in self.blocks)

    @property
    def ok(self) -> bool:
        return all(b.ok for b in self.blocks)

    def format(self) -> str:
        lines = [f"{b.name:<14} max rel err {b.max_rel_err:.3e} "
                 f"({b.checked} entries) {'ok' if b.ok else 'FAIL'}"
                 for b in self.blocks]
        lines.append(f"{'overall':<14} max rel err {self.max_rel_err:.3e} "
                     f"{'ok' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def check_block(store: ParamStore, block, x, rng, samples: int = 20,
                h: float = STEP):
    """Compare analytic grads against central differences on sampled entries."""
    out = block.forward(x)
    probe = rng.standard_normal(out.shape)
    store.zero_grads()
    block.backward(probe)
    analytic = {k: v.copy() for k, v in store.grads.items()}

    def loss():
        return float((block.forward(x) * probe).sum())

    worst = 0.0
    checked = 0
    names = sorted(store.params)
    for _ in range(samples):
        name = names[rng.integers(len(names))]
        p = store.params[name]
        idx = np.unravel_index(rng.integers(p.size), p.shape)
        keep = p[idx]
        p[idx] = keep + h
        up = loss()
        p[idx] = keep - h
        down = loss()
        p[idx] = keep
        fd = (up - down) / (2.0 * h)
        a = analytic[name][idx]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
        checked += 1
    return worst, checked


def grad_check(seed: int = 0, samples: int = 20) -> GradCheckReport:
    """Run the finite-difference comparison over every block type."""
    rng = np.random.default_rng(seed)
    reports = []

    store = ParamStore(seed)
    block = MLP(store, "mlp", (8, 16, 4))
    worst, n = check_block(store, block, rng.standard_normal((5, 8)), rng, samples)
    reports.append(BlockReport("mlp", worst, n))

    store = ParamStore(seed + 1)
    block = ConvEncoder(store, "conv", input_hw=8, out_dim=6)
    worst, n = check_block(store, block, rng.standard_normal((2, 3, 8, 8)), rng, samples)
    reports.append(BlockReport("conv_encoder", worst, n))

    store = ParamStore(seed + 2)
    block = PointEncoder(store, "points", widths=(16, 16), out_dim=8)
    worst, n = check_block(store, block, rng.standard_normal((2, 12, 3)), rng, samples)
    reports.append(BlockReport("point_encoder", worst, n))

    store = ParamStore(seed + 3)
    block = TransformerEncoder(store, "tf", d_model=16, heads=2, depth=2,
                               k=4, out_dim=6)
    worst, n = check_block(store, block, rng.standard_normal((2, 4, 16)), rng, samples)
    reports.append(BlockReport("transformer", worst, n))

    return GradCheckReport(reports)
