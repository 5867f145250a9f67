"""Component ladder and noise-aggregator sweep."""

from __future__ import annotations

import copy
import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import ExperimentConfig
from .pipeline import Prepared, train_and_evaluate

log = logging.getLogger(__name__)

CSV_HEADER = ("variant", "wer", "rel_change")
AGG_LABELS = {"cur": "CURR", "cont": "CONT", "stat": "STAT", "sat": "ATTN"}


@dataclass
class Variant:
    name: str
    mode: str
    edit: Callable[[ExperimentConfig], None]


def _noop(cfg: ExperimentConfig) -> None:
    pass


def _enh_only(cfg: ExperimentConfig) -> None:
    cfg.model.noise_stream = False
    cfg.model.agg_enh = "cur"


def _enh_agg(cfg: ExperimentConfig) -> None:
    cfg.model.noise_stream = False


def _enh_nse_agg(cfg: ExperimentConfig) -> None:
    cfg.model.noise_stream = True


def _specaug(cfg: ExperimentConfig) -> None:
    _enh_nse_agg(cfg)
    cfg.training.spec_augment = True


def _cnn(cfg: ExperimentConfig) -> None:
    _specaug(cfg)
    cfg.model.am.arch = "cnn_tdnnf"


LADDER = [
    Variant("baseline", "baseline", _noop),
    Variant("+enh", "proposed", _enh_only),
    Variant("+enh+AGG", "proposed", _enh_agg),
    Variant("+enh&nse+AGG", "proposed", _enh_nse_agg),
    Variant("+SpecAug", "proposed", _specaug),
    Variant("+CNN", "proposed", _cnn),
]


def aggregator_variants() -> list[Variant]:
    def setter(kind):
        def edit(cfg: ExperimentConfig) -> None:
            cfg.model.noise_stream = True
            cfg.model.agg_nse = kind

        return edit

    return [Variant(label, "proposed", setter(kind)) for kind, label in AGG_LABELS.items()]


def rel_change(wers: list[float]) -> list[float]:
    """Percent change of each WER against the first row."""
    if not wers:
        return []
    ref = wers[0]
    return [0.0 if ref == 0 else 100.0 * (w - ref) / ref for w in wers]


def run_variants(
    cfg: ExperimentConfig, variants: list[Variant], data: Prepared, out_dir: Path | None = None
) -> list[tuple[str, float]]:
    rows = []
    for i, v in enumerate(variants):
        local = copy.deepcopy(cfg)
        v.edit(local)
        local.validate()
        sub = None if out_dir is None else Path(out_dir) / f"{i:02d}"
        _, report = train_and_evaluate(local, v.mode, data, sub)
        log.info("%s: WER %.2f", v.name, report.wer)
        rows.append((v.name, report.wer))
    return rows


def ablation_csv(rows: list[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for (name, wer), rc in zip(rows, rel_change([r[1] for r in rows])):
        w.writerow([name, f"{wer:.2f}", f"{rc:.2f}"])
    return buf.getvalue()


def read_ablation_csv(text: str) -> list[tuple[str, float, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [(r[0], float(r[1]), float(r[2])) for r in reader if r]
