"""Context aggregation of frame-wise SENAN outputs (CUR, CONT, STAT, SAT)."""

from __future__ import annotations

import math
import zlib

import numpy as np

from . import numerics as nx
from .errors import InvalidConfig
from .module import Module, affine
from .numerics import Value

KINDS = ("cur", "cont", "stat", "sat")

STAT_BACK, STAT_AHEAD = 75, 74
SAT_BACK, SAT_AHEAD = 5, 2
MASK = -1e30


def _as_value(y) -> Value:
    return y if isinstance(y, Value) else nx.constant(y)


def agg_cur(y):
    return _as_value(y)


def agg_cont(y):
    y = _as_value(y)
    T = y.shape[0]
    t = np.arange(T)
    prev = nx.take_rows(y, np.maximum(t - 1, 0))
    nxt = nx.take_rows(y, np.minimum(t + 1, T - 1))
    return nx.concat([prev, y, nxt], axis=1)


def window_mask(T: int, back: int, ahead: int) -> np.ndarray:
    """Boolean ``[T, T]`` band: row t selects frames t-back .. t+ahead inside the utterance."""
    t = np.arange(T)
    d = t[None, :] - t[:, None]
    return (d >= -back) & (d <= ahead)


def agg_stat(y, back: int = STAT_BACK, ahead: int = STAT_AHEAD):
    """Windowed mean and population variance, concatenated."""
    y = _as_value(y)
    band = window_mask(y.shape[0], back, ahead).astype(np.float64)
    avg = nx.constant(band / band.sum(axis=1, keepdims=True))
    mean = nx.matmul(avg, y)
    second = nx.matmul(avg, nx.mul(y, y))
    var = nx.sub(second, nx.mul(mean, mean))
    return nx.concat([mean, var], axis=1)


class SelfAttention(Module):
    """Single-head scaled dot-product attention with query/key/value projections."""

    def __init__(self, dim: int, name: str, seed: int = 0, d_k: int | None = None):
        super().__init__()
        self.prefix = f"agg.{name}"
        rng = np.random.default_rng([seed, 3, zlib.crc32(name.encode())])
        d_k = dim if d_k is None else d_k
        self.dim, self.d_k = dim, d_k
        self.wq = self.add_param("wq", rng.standard_normal((d_k, dim)) / math.sqrt(dim))
        self.wk = self.add_param("wk", rng.standard_normal((d_k, dim)) / math.sqrt(dim))
        self.wv = self.add_param("wv", np.eye(dim) + 0.1 * rng.standard_normal((dim, dim)) / math.sqrt(dim))


def attention_weights(y, params: SelfAttention, back: int = SAT_BACK, ahead: int = SAT_AHEAD) -> Value:
    y = _as_value(y)
    q = affine(y, params.wq)
    k = affine(y, params.wk)
    scores = nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(params.d_k))
    band = window_mask(y.shape[0], back, ahead)
    scores = nx.add(scores, nx.constant(np.where(band, 0.0, MASK)))
    return nx.exp(nx.log_softmax(scores))


def agg_sat(y, params: SelfAttention, back: int = SAT_BACK, ahead: int = SAT_AHEAD):
    y = _as_value(y)
    weights = attention_weights(y, params, back, ahead)
    return nx.matmul(weights, affine(y, params.wv))


class Aggregator:
    def __init__(self, kind: str, dim: int, name: str = "enh", seed: int = 0):
        if kind not in KINDS:
            raise InvalidConfig(f"aggregation kind must be one of {KINDS}, got {kind!r}")
        self.kind = kind
        self.dim = dim
        self.attention = SelfAttention(dim, name, seed) if kind == "sat" else None

    @property
    def out_dim(self) -> int:
        return {"cur": 1, "cont": 3, "stat": 2, "sat": 1}[self.kind] * self.dim

    def parameters(self):
        return self.attention.parameters() if self.attention is not None else []

    def __call__(self, y):
        if self.kind == "cur":
            return agg_cur(y)
        if self.kind == "cont":
            return agg_cont(y)
        if self.kind == "stat":
            return agg_stat(y)
        return agg_sat(y, self.attention)
