"""Parameter container shared by the trainable models."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Parameter, Value


class Module:
    prefix = ""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add_param(self, name: str, data, constraint: str = "none") -> Parameter:
        full = f"{self.prefix}.{name}" if self.prefix else name
        if full in self._params:
            raise ValueError(f"duplicate parameter name {full!r}")
        p = nx.make_parameter(full, data, constraint)
        self._params[full] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> dict[str, Parameter]:
        return dict(self._params)


def he_init(rng: np.random.Generator, rows: int, cols: int, gain: float = 2.0) -> np.ndarray:
    return rng.standard_normal((rows, cols)) * np.sqrt(gain / cols)


def affine(x: Value, w: Parameter, b: Parameter | None = None) -> Value:
    """``x @ W^T (+ b)`` with ``W`` stored as ``[out, in]``."""
    y = nx.matmul(x, nx.transpose(w.value))
    return nx.add_bias(y, b.value) if b is not None else y
