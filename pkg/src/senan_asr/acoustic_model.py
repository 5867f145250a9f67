"""Factorized TDNN acoustic model with an optional convolutional front end."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import FrameCountMismatch, InvalidConfig, ShapeMismatch
from .module import Module, affine, he_init
from .numerics import Value

SEMI_ORTHOGONAL = "semi_orthogonal"


@dataclass
class AmConfig:
    arch: str = "tdnnf"  # "tdnnf" | "cnn_tdnnf"
    layers: int = 4
    hidden: int = 64
    bottleneck: int = 16
    final_bottleneck: int = 24
    n_states: int = 10
    offsets: tuple[int, ...] = (-1, 0, 1)
    bypass_scale: float = 0.66
    conv_filters: tuple[int, ...] = (3, 3, 4, 4, 4, 8)
    conv_height: int = 40  # acoustic coefficients at the start of every input row
    renorm: bool = True  # unit-RMS rescaling over the frames of each utterance
    renorm_eps: float = 1e-3  # keeps nearly dead units from blowing up

    def validate(self) -> None:
        if self.arch not in ("tdnnf", "cnn_tdnnf"):
            raise InvalidConfig(f"am.arch must be tdnnf or cnn_tdnnf, got {self.arch!r}")
        if min(self.layers, self.hidden, self.bottleneck, self.final_bottleneck, self.n_states) < 1:
            raise InvalidConfig("acoustic model extents must be positive")
        if self.bottleneck >= self.hidden:
            raise InvalidConfig("bottleneck must be narrower than the hidden layer")
        if not 0.0 <= self.bypass_scale <= 1.0:
            raise InvalidConfig("bypass_scale must lie in [0, 1]")
        if not self.renorm_eps > 0:
            raise InvalidConfig("renorm_eps must be positive")


def build_input(x_nsy, x_enh=None, x_nse=None) -> Value:
    """Frame-wise concatenation noisy + enhanced + noise-aware."""
    parts = [p if isinstance(p, Value) else nx.constant(p) for p in (x_nsy, x_enh, x_nse) if p is not None]
    frames = {p.shape[0] for p in parts}
    if len(frames) != 1:
        raise FrameCountMismatch(f"stream frame counts differ: {[p.shape for p in parts]}")
    return nx.concat(parts, axis=1)


def semi_orthogonal_init(rng: np.random.Generator, rows: int, cols: int, steps: int = 12) -> np.ndarray:
    """Gaussian draw projected onto the floating-scale semi-orthogonal set."""
    m = rng.standard_normal((rows, cols)) / np.sqrt(cols)
    for _ in range(steps):
        m = nx.semi_orthogonal_step(m)
    return m


def splice(x: Value, offsets) -> Value:
    T = x.shape[0]
    t = np.arange(T)
    parts = [x if o == 0 else nx.take_rows(x, np.clip(t + o, 0, T - 1)) for o in offsets]
    return nx.concat(parts, axis=1)


class TdnnfLayer:
    def __init__(
        self, module: Module, name: str, d_in: int, d_out: int, bottleneck: int, offsets, bypass: float, rng, renorm=True,
        renorm_eps: float = 1e-3,
    ):
        ctx = len(offsets) * d_in
        self.renorm = renorm
        self.renorm_eps = renorm_eps
        self.offsets = tuple(offsets)
        self.linear = module.add_param(f"{name}.linear", semi_orthogonal_init(rng, bottleneck, ctx), SEMI_ORTHOGONAL)
        self.affine = module.add_param(f"{name}.affine", he_init(rng, d_out, bottleneck))
        self.bias = module.add_param(f"{name}.bias", np.zeros(d_out))
        self.bypass = bypass if d_in == d_out else None

    def __call__(self, x: Value) -> Value:
        h = affine(splice(x, self.offsets), self.linear)
        h = nx.relu(affine(h, self.affine, self.bias))
        if self.renorm:
            h = nx.rms_normalize(h, self.renorm_eps)
        if self.bypass is not None:
            h = nx.add(nx.scale(x, self.bypass), nx.scale(h, 1.0 - self.bypass))
        return h


class ConvLayer:
    """3x3 convolution over a (time, coefficient) grid stored as ``[T*H, C]`` rows."""

    def __init__(self, module: Module, name: str, c_in: int, c_out: int, rng, renorm: bool = True, renorm_eps: float = 1e-3):
        self.c_in, self.c_out = c_in, c_out
        self.renorm = renorm
        self.renorm_eps = renorm_eps
        self.weight = module.add_param(f"{name}.w", he_init(rng, c_out, 9 * c_in))
        self.bias = module.add_param(f"{name}.b", np.zeros(c_out))

    def __call__(self, x: Value, T: int, H: int) -> Value:
        t = np.arange(T)[:, None]
        h = np.arange(H)[None, :]
        parts = []
        for dt in (-1, 0, 1):
            for dh in (-1, 0, 1):
                idx = (np.clip(t + dt, 0, T - 1) * H + np.clip(h + dh, 0, H - 1)).reshape(-1)
                parts.append(nx.take_rows(x, idx))
        y = nx.relu(affine(nx.concat(parts, axis=1), self.weight, self.bias))
        return nx.rms_normalize(y, self.renorm_eps) if self.renorm else y


class AcousticModel(Module):
    prefix = "am"

    def __init__(self, d_in: int, cfg: AmConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.d_in = d_in
        rng = np.random.default_rng([seed, 2])
        self.convs: list[ConvLayer] = []
        width = d_in
        if cfg.arch == "cnn_tdnnf":
            if cfg.conv_height > d_in:
                raise InvalidConfig("conv_height exceeds input dimension")
            c = 1
            for i, f in enumerate(cfg.conv_filters):
                self.convs.append(ConvLayer(self, f"conv{i}", c, f, rng, cfg.renorm, cfg.renorm_eps))
                c = f
            width = cfg.conv_height * c + (d_in - cfg.conv_height)
        self.tdnnf: list[TdnnfLayer] = []
        for i in range(cfg.layers):
            self.tdnnf.append(
                TdnnfLayer(self, f"tdnnf{i}", width, cfg.hidden, cfg.bottleneck, cfg.offsets, cfg.bypass_scale, rng, cfg.renorm, cfg.renorm_eps)
            )
            width = cfg.hidden
        self.prefinal = self.add_param(
            "prefinal.linear", semi_orthogonal_init(rng, cfg.final_bottleneck, width), SEMI_ORTHOGONAL
        )
        self.output = self.add_param("output.w", he_init(rng, cfg.n_states, cfg.final_bottleneck, gain=1.0))
        self.output_bias = self.add_param("output.b", np.zeros(cfg.n_states))

    def constrained(self):
        return [p for p in self.parameters() if p.constraint == SEMI_ORTHOGONAL]

    def receptive_field(self) -> tuple[int, int]:
        back = ahead = 0
        if self.convs:
            back += len(self.convs)
            ahead += len(self.convs)
        for layer in self.tdnnf:
            back -= min(layer.offsets)
            ahead += max(layer.offsets)
        return back, ahead


def am_forward(model: AcousticModel, x_in) -> Value:
    x = x_in if isinstance(x_in, Value) else nx.constant(x_in)
    if x.data.ndim != 2 or x.shape[1] != model.d_in:
        raise ShapeMismatch(f"acoustic model expects [T, {model.d_in}] input, got {x.shape}")
    T = x.shape[0]
    if model.convs:
        H = model.cfg.conv_height
        grid = nx.reshape(nx.take_cols(x, 0, H), (T * H, 1))
        for conv in model.convs:
            grid = conv(grid, T, H)
        flat = nx.reshape(grid, (T, H * model.convs[-1].c_out))
        x = nx.concat([flat, nx.take_cols(x, H, model.d_in)], axis=1) if model.d_in > H else flat
    for layer in model.tdnnf:
        x = layer(x)
    h = affine(x, model.prefinal)
    return affine(h, model.output, model.output_bias)
