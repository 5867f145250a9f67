"""Multi-task autoencoder that splits noisy frames into speech and noise estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ShapeMismatch
from .module import Module, affine, he_init
from .numerics import Value


def hidden_sizes(h_first: int, h_last: int, n_layers: int = 5) -> list[int]:
    step = (h_last - h_first) / (n_layers - 1)
    return [int(round(h_first + i * step)) for i in range(n_layers)]


@dataclass
class SenanOutput:
    y_enh: Value
    y_nse: Value | None


class SenanModel(Module):
    """Shared ReLU trunk of five layers widening linearly, with two linear heads."""

    prefix = "senan"

    def __init__(
        self,
        d_in: int,
        d_out: int,
        h_first: int = 64,
        h_last: int = 128,
        noise_head: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        rng = np.random.default_rng([seed, 1])
        self.d_in, self.d_out = d_in, d_out
        self.sizes = hidden_sizes(h_first, h_last)
        self.trunk = []
        prev = d_in
        for i, h in enumerate(self.sizes):
            w = self.add_param(f"trunk{i}.w", he_init(rng, h, prev))
            b = self.add_param(f"trunk{i}.b", np.zeros(h))
            self.trunk.append((w, b))
            prev = h
        self.head_enh = (
            self.add_param("enh.w", he_init(rng, d_out, prev, gain=1.0)),
            self.add_param("enh.b", np.zeros(d_out)),
        )
        self.head_nse = None
        if noise_head:
            self.head_nse = (
                self.add_param("nse.w", he_init(rng, d_out, prev, gain=1.0)),
                self.add_param("nse.b", np.zeros(d_out)),
            )

    def trunk_forward(self, x: Value) -> Value:
        h = x
        for w, b in self.trunk:
            h = nx.relu(affine(h, w, b))
        return h


def senan_forward(model: SenanModel, x_nsy) -> SenanOutput:
    x = x_nsy if isinstance(x_nsy, Value) else nx.constant(x_nsy)
    if x.data.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeMismatch(f"SENAN expects [T, {model.d_in}] input, got {x.shape}")
    h = model.trunk_forward(x)
    y_enh = affine(h, *model.head_enh)
    y_nse = affine(h, *model.head_nse) if model.head_nse is not None else None
    return SenanOutput(y_enh, y_nse)


def mse_loss(y: Value, target) -> Value:
    """Summed squared Euclidean distance over all frames."""
    t = target if isinstance(target, Value) else nx.constant(target)
    if y.shape != t.shape:
        raise ShapeMismatch(f"mse_loss: {y.shape} vs {t.shape}")
    d = nx.sub(y, t)
    return nx.total(nx.mul(d, d))
