"""Joint objective, SGD training loop, and decoding for the SENAN + AM system."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .acoustic_model import AcousticModel, AmConfig, am_forward, build_input
from .aggregation import Aggregator
from .checkpoint import save_checkpoint
from .corpus import PhoneInventory
from .errors import InvalidConfig, LabelOutOfRange, NoPath, ShapeMismatch
from .features import UtteranceFeatures, spec_augment
from .lfmmi import Graph, PhoneLm, build_denominator_graph, build_numerator_graph, lfmmi_objective, viterbi_decode
from .numerics import Parameter, Value
from .senan import SenanModel, mse_loss, senan_forward

log = logging.getLogger(__name__)

MODES = ("baseline", "proposed", "oracle")
METRICS_HEADER = ["epoch", "step", "lr", "L_total", "L_ce", "F_mmi", "L_enh", "L_nse", "skipped"]


@dataclass
class LossWeights:
    alpha: float = 5.0
    beta: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfig("loss weights must be nonnegative")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr_initial: float = 0.01
    lr_final: float = 0.001
    constraint_every: int = 4
    seed: int = 0
    momentum: float = 0.9
    grad_clip: float = 1.0  # L2 norm cap per parameter tensor, 0 disables
    floating_scale: bool = True
    spec_augment: bool = False
    time_masks: int = 2
    max_time_width: int = 20
    feat_masks: int = 2
    max_feat_width: int = 8
    augment: bool = False

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.constraint_every < 1:
            raise InvalidConfig("epochs must be >= 0 and batch/constraint counts positive")
        if not 0 < self.lr_final <= self.lr_initial and not (self.lr_initial == self.lr_final == 0):
            raise InvalidConfig("need 0 < lr_final <= lr_initial")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig("momentum must lie in [0, 1)")
        if self.grad_clip < 0:
            raise InvalidConfig("grad_clip must be >= 0")


@dataclass
class ModelConfig:
    mode: str = "proposed"
    noise_stream: bool = True
    agg_enh: str = "cont"
    agg_nse: str = "stat"
    senan_first: int = 64
    senan_last: int = 128
    am: AmConfig = field(default_factory=AmConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        self.am.validate()


@dataclass
class StepOutput:
    loss: Value
    ce: float
    fmmi: float
    enh: float
    nse: float
    frames: int


class System:
    """SENAN, the two aggregators, and the acoustic model wired together."""

    def __init__(self, d_nsy: int, n_ceps: int, cfg: ModelConfig, inventory: PhoneInventory, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.inventory = inventory
        self.d_nsy, self.n_ceps = d_nsy, n_ceps
        self.senan = None
        self.agg_enh = self.agg_nse = None
        d_in = d_nsy
        if cfg.mode != "baseline":
            self.senan = SenanModel(d_nsy, n_ceps, cfg.senan_first, cfg.senan_last, noise_head=cfg.noise_stream, seed=seed)
            self.agg_enh = Aggregator(cfg.agg_enh, n_ceps, "enh", seed)
            d_in += self.agg_enh.out_dim
            if cfg.noise_stream:
                self.agg_nse = Aggregator(cfg.agg_nse, n_ceps, "nse", seed)
                d_in += self.agg_nse.out_dim
        am_cfg = cfg.am
        am_cfg.n_states = inventory.num_states
        am_cfg.conv_height = min(am_cfg.conv_height, n_ceps)
        self.am = AcousticModel(d_in, am_cfg, seed)
        self.d_in = d_in

    def parameters(self) -> list[Parameter]:
        params = []
        if self.senan is not None:
            params += self.senan.parameters()
        for agg in (self.agg_enh, self.agg_nse):
            if agg is not None:
                params += agg.parameters()
        return params + self.am.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def forward(self, feats: UtteranceFeatures, x_nsy: np.ndarray | None = None):
        """Return ``(logits, y_enh, y_nse)``; SENAN outputs are None when unused."""
        x = nx.constant(feats.x_nsy if x_nsy is None else x_nsy)
        if self.cfg.mode == "baseline":
            return am_forward(self.am, x), None, None
        if self.cfg.mode == "oracle":
            y_enh = nx.constant(feats.clean_target)
            y_nse = nx.constant(feats.noise_target) if self.cfg.noise_stream else None
        else:
            out = senan_forward(self.senan, x)
            y_enh, y_nse = out.y_enh, out.y_nse
        x_enh = self.agg_enh(y_enh)
        x_nse = self.agg_nse(y_nse) if y_nse is not None else None
        return am_forward(self.am, build_input(x, x_enh, x_nse)), y_enh, y_nse

    def logits(self, feats: UtteranceFeatures) -> np.ndarray:
        return self.forward(feats)[0].data


def ce_loss(logits: Value, alignment: Sequence[int]) -> Value:
    """Summed frame cross-entropy against the state alignment."""
    labels = np.asarray(alignment, dtype=np.int64)
    T, K = logits.shape
    if len(labels) != T:
        raise ShapeMismatch(f"alignment has {len(labels)} labels for {T} frames")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise LabelOutOfRange(f"labels must lie in [0, {K})")
    onehot = np.zeros((T, K))
    onehot[np.arange(T), labels] = 1.0
    return nx.scale(nx.total(nx.mul(nx.log_softmax(logits), nx.constant(onehot))), -1.0)


def joint_loss(ce: Value, fmmi: Value, l_enh: Value, l_nse: Value, w: LossWeights) -> Value:
    """``alpha * CE - F_mmi + beta * (L_enh + L_nse)``."""
    parts = [v if isinstance(v, Value) else nx.constant(v) for v in (ce, fmmi, l_enh, l_nse)]
    ce, fmmi, l_enh, l_nse = (nx.reshape(v, ()) for v in parts)
    out = nx.sub(nx.scale(ce, w.alpha), fmmi)
    return nx.add(out, nx.scale(nx.add(l_enh, l_nse), w.beta))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    if total_steps <= 0:
        return cfg.lr_initial
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if cfg.lr_initial == 0:
        return 0.0
    return cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** (step / total_steps)


class Trainer:
    """Holds graphs, optimiser state, and counters for one training run."""

    def __init__(self, system: System, train_feats: Sequence[UtteranceFeatures], cfg: TrainConfig, weights: LossWeights):
        cfg.validate()
        self.system = system
        self.cfg = cfg
        self.weights = weights
        inv = system.inventory
        self.lm = PhoneLm.train([f.transcript for f in train_feats], inv.num_phones)
        self.den = build_denominator_graph(self.lm, inv)
        self._num_cache: dict[str, Graph] = {}
        self.step = 0
        self.skipped = 0
        self.velocity: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng([cfg.seed, 11])

    def numerator(self, feats: UtteranceFeatures) -> Graph:
        g = self._num_cache.get(feats.id)
        if g is None:
            g = build_numerator_graph(feats.transcript, self.system.inventory, self.lm)
            self._num_cache[feats.id] = g
        return g

    def utterance_loss(self, feats: UtteranceFeatures, train: bool = True) -> StepOutput:
        x = feats.x_nsy
        if train and self.cfg.spec_augment:
            c = self.cfg
            T = x.shape[0]
            x = spec_augment(
                x, c.time_masks, min(c.max_time_width, T), c.feat_masks, min(c.max_feat_width, self.system.n_ceps),
                self.rng, n_coeffs=self.system.n_ceps,
            )
        logits, y_enh, y_nse = self.system.forward(feats, x)
        ce = ce_loss(logits, feats.alignment)
        fmmi = lfmmi_objective(logits, self.numerator(feats), self.den)
        zero = nx.constant(0.0)
        if self.system.cfg.mode == "proposed":
            l_enh = mse_loss(y_enh, feats.clean_target)
            l_nse = mse_loss(y_nse, feats.noise_target) if y_nse is not None else zero
        else:
            l_enh = l_nse = zero
        loss = joint_loss(ce, fmmi, l_enh, l_nse, self.weights)
        return StepOutput(loss, float(ce.data), float(fmmi.data), float(l_enh.data), float(l_nse.data), feats.frames)

    def train_step(self, batch: Sequence[UtteranceFeatures], lr: float) -> dict:
        """One SGD update on the summed, frame-normalised batch loss."""
        if not batch:
            raise ValueError("empty batch")
        params = self.system.parameters()
        nx.zero_grads(params)
        outs = []
        skipped = 0
        for feats in batch:
            try:
                outs.append(self.utterance_loss(feats))
            except NoPath:
                log.warning("utterance %s admits no numerator path; skipped", feats.id)
                skipped += 1
        frames = sum(o.frames for o in outs)
        stats = dict(ce=0.0, fmmi=0.0, enh=0.0, nse=0.0, total=0.0, frames=frames, skipped=skipped)
        if outs:
            for o in outs:
                nx.backward(nx.scale(o.loss, 1.0 / frames))
                stats["ce"] += o.ce
                stats["fmmi"] += o.fmmi
                stats["enh"] += o.enh
                stats["nse"] += o.nse
            w = self.weights
            stats["total"] = w.alpha * stats["ce"] - stats["fmmi"] + w.beta * (stats["enh"] + stats["nse"])
            self.apply_update(params, lr)
        self.step += 1
        if self.step % self.cfg.constraint_every == 0:
            self.apply_constraints()
        self.skipped += skipped
        return stats

    def apply_update(self, params: Sequence[Parameter], lr: float) -> None:
        mu = self.cfg.momentum
        cap = self.cfg.grad_clip
        for p in params:
            g = p.value.grad
            if g is None:
                continue
            if cap > 0:
                # per-tensor cap: the reconstruction terms would otherwise swamp the AM update
                norm = float(np.sqrt(np.sum(g * g)))
                if norm > cap:
                    g = g * (cap / norm)
            if mu > 0:
                v = self.velocity.get(p.name)
                v = g if v is None else mu * v + g
                self.velocity[p.name] = v
                g = v
            p.data = p.data - lr * g

    def apply_constraints(self) -> None:
        for p in self.system.am.constrained():
            p.data = nx.semi_orthogonal_step(p.data, floating=self.cfg.floating_scale)


@dataclass
class TrainResult:
    system: System
    trainer: Trainer
    metrics: list[dict]
    frame_norm: list[int]


def metrics_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in rows:
        writer.writerow([r["epoch"], r["step"]] + [repr(float(r[k])) for k in METRICS_HEADER[2:8]] + [r["skipped"]])
    return buf.getvalue()


def run_training(
    system: System,
    train_feats: Sequence[UtteranceFeatures],
    cfg: TrainConfig,
    weights: LossWeights = LossWeights(),
    out_dir: Path | None = None,
) -> TrainResult:
    trainer = Trainer(system, train_feats, cfg, weights)
    feats = list(train_feats)
    n_batches = math.ceil(len(feats) / cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    shuffle_rng = np.random.default_rng([cfg.seed, 5])
    rows, frame_norm = [], []
    best = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg.epochs == 0:
            save_checkpoint(out_dir / "best.ckpt", system.named_parameters())
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(feats))
        acc = dict(ce=0.0, fmmi=0.0, enh=0.0, nse=0.0, skipped=0)
        lr = cfg.lr_initial
        for b in range(n_batches):
            batch = [feats[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            lr = lr_at(trainer.step, total_steps, cfg)
            stats = trainer.train_step(batch, lr)
            frame_norm.append(stats["frames"])
            for k in ("ce", "fmmi", "enh", "nse", "skipped"):
                acc[k] += stats[k]
        total = weights.alpha * acc["ce"] - acc["fmmi"] + weights.beta * (acc["enh"] + acc["nse"])
        row = dict(
            epoch=epoch, step=trainer.step, lr=lr, L_total=total, L_ce=acc["ce"], F_mmi=acc["fmmi"],
            L_enh=acc["enh"], L_nse=acc["nse"], skipped=acc["skipped"],
        )
        rows.append(row)
        log.info("epoch %d  L=%.4f  ce=%.4f  F=%.4f  enh=%.3f  nse=%.3f", epoch, total, acc["ce"], acc["fmmi"], acc["enh"], acc["nse"])
        if out_dir is not None and (best is None or total < best):
            best = total
            save_checkpoint(out_dir / "best.ckpt", system.named_parameters())
    if out_dir is not None:
        save_checkpoint(out_dir / "final.ckpt", system.named_parameters())
        (out_dir / "metrics.csv").write_text(metrics_csv(rows))
    return TrainResult(system, trainer, rows, frame_norm)


# ---------------------------------------------------------------------------
# Decoding


def decode(system: System, feats: Sequence[UtteranceFeatures], graph: Graph) -> dict[str, tuple[list[int], list[int]]]:
    """Viterbi phone and frame-label sequences per utterance id."""
    out = {}
    for f in feats:
        logits = system.logits(f)
        try:
            _, labels, phones = viterbi_decode(graph, logits, system.inventory)
        except NoPath:
            log.warning("no decoding path for %s", f.id)
            labels, phones = [], []
        out[f.id] = (phones, labels)
    return out
