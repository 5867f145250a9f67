"""End-to-end glue: corpus to features, training, decoding, and scoring."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .checkpoint import load_checkpoint, restore
from .config import ExperimentConfig, parse_config
from .corpus import Corpus, PhoneInventory, generate_corpus, make_inventory, read_corpus, triple_corpus
from .errors import CheckpointError
from .features import SpeakerTable, UtteranceFeatures, extract
from .lfmmi import Graph, PhoneLm, build_denominator_graph
from .scoring import ScoreReport, score
from .training import System, TrainResult, decode, run_training

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    inventory: PhoneInventory
    train: list[UtteranceFeatures]
    test: list[UtteranceFeatures]

    @property
    def d_nsy(self) -> int:
        return self.train[0].x_nsy.shape[1]


def featurize(corpus: Corpus, cfg: ExperimentConfig) -> list[UtteranceFeatures]:
    speakers = SpeakerTable(cfg.features.spk_dim, cfg.corpus.seed)
    return [extract(u, cfg.features, speakers) for u in corpus.utterances]


def prepare(cfg: ExperimentConfig, corpus_dir: Path | None = None) -> Prepared:
    """Load (or synthesise, when ``corpus_dir`` is None) both splits and extract features."""
    inv = make_inventory(cfg.corpus)
    if corpus_dir is None:
        train, test = generate_corpus(cfg.corpus, "train"), generate_corpus(cfg.corpus, "test")
    else:
        train = read_corpus(corpus_dir, "train", inv, cfg.corpus.seed)
        test = read_corpus(corpus_dir, "test", inv, cfg.corpus.seed)
    if cfg.training.augment:
        train = triple_corpus(train, cfg.corpus)
    return Prepared(inv, featurize(train, cfg), featurize(test, cfg))


def build_system(cfg: ExperimentConfig, mode: str, d_nsy: int, inventory: PhoneInventory) -> System:
    model = copy.deepcopy(cfg.model)
    model.mode = mode
    return System(d_nsy, cfg.features.n_ceps, model, inventory, seed=cfg.training.seed)


def decoding_graph(train_transcripts: Sequence[Sequence[int]], inventory: PhoneInventory) -> Graph:
    return build_denominator_graph(PhoneLm.train(train_transcripts, inventory.num_phones), inventory)


def evaluate(system: System, feats: Sequence[UtteranceFeatures], graph: Graph) -> tuple[ScoreReport, dict]:
    hyps = decode(system, feats, graph)
    report = score(
        {f.id: f.transcript for f in feats},
        {k: v[0] for k, v in hyps.items()},
        {f.id: f.alignment for f in feats},
        {k: v[1] for k, v in hyps.items()},
    )
    return report, hyps


def train_and_evaluate(
    cfg: ExperimentConfig, mode: str, data: Prepared, out_dir: Path | None = None
) -> tuple[TrainResult, ScoreReport]:
    system = build_system(cfg, mode, data.d_nsy, data.inventory)
    result = run_training(system, data.train, cfg.training, cfg.loss, out_dir)
    if out_dir is not None:
        save_run_info(out_dir, cfg, mode, result)
    report, _ = evaluate(system, data.test, result.trainer.den)
    return result, report


def save_run_info(out_dir: Path, cfg: ExperimentConfig, mode: str, result: TrainResult) -> None:
    out_dir = Path(out_dir)
    (out_dir / "config.txt").write_text(cfg.dumps())
    info = {"mode": mode, "frame_norm": result.frame_norm, "skipped": result.trainer.skipped}
    (out_dir / "run.json").write_text(json.dumps(info, indent=1) + "\n")


def load_trained(checkpoint: Path, d_nsy: int, inventory: PhoneInventory | None = None) -> tuple[System, ExperimentConfig]:
    """Rebuild a system from a checkpoint and the config/run files written beside it."""
    run_dir = Path(checkpoint).parent
    try:
        cfg = parse_config((run_dir / "config.txt").read_text())
        mode = json.loads((run_dir / "run.json").read_text())["mode"]
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{run_dir}: missing or unreadable run metadata ({exc})") from exc
    inv = inventory if inventory is not None else make_inventory(cfg.corpus)
    system = build_system(cfg, mode, d_nsy, inv)
    restore(system.named_parameters(), load_checkpoint(checkpoint))
    return system, cfg
