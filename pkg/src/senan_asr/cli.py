"""Command-line pipeline: corpus, training, decoding, scoring, ablations, report."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ablation as abl
from .config import ExperimentConfig, load_config, parse_config
from .corpus import MANIFEST, generate_corpus, make_inventory, read_corpus, read_manifest, write_corpus
from .errors import (
    CheckpointError,
    DataError,
    InvalidConfig,
    MissingUtterance,
    SenanError,
    UnknownSpeaker,
)
from .pipeline import decoding_graph, featurize, load_trained, prepare, train_and_evaluate
from .scoring import ScoreReport, score
from .training import MODES, decode

log = logging.getLogger("senan_asr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_corpus(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    corpus_dir = Path(out_dir) / "corpus"
    manifests = []
    print("split\tutterances\tsnr_mean\tsnr_min\tsnr_max")
    for split in ("train", "test"):
        corpus = generate_corpus(cfg.corpus, split)
        manifests.append(write_corpus(corpus, corpus_dir))
        snr = np.array([u.snr_db for u in corpus.utterances]) if len(corpus) else np.zeros(1)
        print(f"{split}\t{len(corpus)}\t{snr.mean():.2f}\t{snr.min():.2f}\t{snr.max():.2f}")
    (corpus_dir / "config.txt").write_text(cfg.dumps())
    return manifests


def cmd_train(cfg: ExperimentConfig, corpus_dir: Path, out_dir: Path, mode: str) -> Path:
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    data = prepare(cfg, corpus_dir)
    run_dir = Path(out_dir) / mode
    result, report = train_and_evaluate(cfg, mode, data, run_dir)
    print("epoch\tL_total\tL_ce\tF_mmi\tL_enh\tL_nse")
    for r in result.metrics:
        print(f"{r['epoch']}\t{r['L_total']:.4f}\t{r['L_ce']:.4f}\t{r['F_mmi']:.4f}\t{r['L_enh']:.4f}\t{r['L_nse']:.4f}")
    print(f"test_WER\t{report.wer:.2f}")
    return run_dir / "final.ckpt"


def cmd_decode(checkpoint: Path, corpus_dir: Path, split: str, out_dir: Path) -> Path:
    corpus_dir = Path(corpus_dir)
    try:
        cfg = parse_config((Path(checkpoint).parent / "config.txt").read_text())
    except OSError as exc:
        raise CheckpointError(f"no config beside {checkpoint}: {exc}") from exc
    inv = make_inventory(cfg.corpus)
    feats = featurize(read_corpus(corpus_dir, split, inv, cfg.corpus.seed), cfg)
    d_nsy = cfg.features.n_ceps + cfg.features.spk_dim
    system, _ = load_trained(checkpoint, d_nsy, inv)
    graph = decoding_graph([r["transcript"] for r in read_manifest(corpus_dir / f"train.{MANIFEST}")], inv)
    hyps = decode(system, feats, graph)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hyp_path = out_dir / f"{split}.hyp"
    hyp_path.write_text("".join(f"{f.id}\t{' '.join(map(str, hyps[f.id][0]))}\n" for f in feats))
    (out_dir / f"{split}.frames").write_text("".join(f"{f.id}\t{' '.join(map(str, hyps[f.id][1]))}\n" for f in feats))
    return hyp_path


def read_id_table(path: Path) -> dict[str, list[int]]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(str(exc)) from exc
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        uid, _, rest = line.partition("\t")
        try:
            out[uid.strip()] = [int(t) for t in rest.split()]
        except ValueError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return out


def cmd_score(hypotheses: Path, manifest: Path, frames: Path | None = None) -> ScoreReport:
    manifest = Path(manifest)
    rows = read_manifest(manifest)
    refs = {r["id"]: r["transcript"] for r in rows}
    hyps = read_id_table(hypotheses)
    ref_frames = hyp_frames = None
    if frames is not None:
        hyp_frames = read_id_table(frames)
        ref_frames = {}
        for r in rows:
            try:
                ref_frames[r["id"]] = [int(s) for s in (manifest.parent / r["alignment"]).read_text().split()]
            except OSError as exc:
                raise DataError(str(exc)) from exc
    report = score(refs, hyps, ref_frames, hyp_frames)
    for line in report.lines():
        print(line)
    return report


def cmd_ablate(cfg: ExperimentConfig, corpus_dir: Path | None, out_dir: Path, which: str = "both") -> list[Path]:
    from .plotting import plot_ablation

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare(cfg, corpus_dir)
    written = []
    jobs = []
    if which in ("ladder", "both"):
        jobs.append(("ladder", abl.LADDER))
    if which in ("agg", "both"):
        jobs.append(("agg", abl.aggregator_variants()))
    for name, variants in jobs:
        rows = abl.run_variants(cfg, variants, data, out_dir / f"ablation_{name}")
        path = out_dir / f"ablation_{name}.csv"
        text = abl.ablation_csv(rows)
        path.write_text(text)
        sys.stdout.write(text)
        plot_ablation(rows, out_dir / f"ablation_{name}.png", title=name)
        written.append(path)
    return written


def _read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(out_dir: Path) -> list[Path]:
    """Tabulate whatever runs and ablations exist under ``out_dir`` and draw their figures."""
    from .plotting import plot_ablation, plot_training

    out_dir = Path(out_dir)
    figures = []
    runs = {p.parent.name: _read_metrics(p) for p in sorted(out_dir.glob("*/metrics.csv"))}
    if runs:
        print("run\tepochs\tfinal_L_total\tfinal_L_ce\tfinal_F_mmi")
        for name, rows in sorted(runs.items()):
            last = rows[-1] if rows else {}
            print(f"{name}\t{len(rows)}\t{last.get('L_total', '')}\t{last.get('L_ce', '')}\t{last.get('F_mmi', '')}")
        figures.append(plot_training(runs, out_dir / "training_curves.png"))
    for csv_path in sorted(out_dir.glob("ablation_*.csv")):
        rows = abl.read_ablation_csv(csv_path.read_text())
        print(f"# {csv_path.stem}")
        sys.stdout.write(csv_path.read_text())
        figures.append(plot_ablation([(r[0], r[1]) for r in rows], csv_path.with_suffix(".png"), title=csv_path.stem))
    if not figures:
        raise DataError(f"nothing to report under {out_dir}")
    for f in figures:
        print(f"figure\t{f}")
    return figures


# ---------------------------------------------------------------------------
# Argument handling


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="key=value experiment config")
    p.add_argument("--seed", type=int, default=d, help="override corpus and training seeds")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS if suppress else Path("runs"), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="senan-asr", description=__doc__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", parents=[common], help="synthesise and write the corpus")

    p = sub.add_parser("train", parents=[common], help="train one system")
    p.add_argument("--mode", choices=MODES, default="proposed")
    p.add_argument("--corpus", type=Path, help="corpus directory (default: OUT/corpus)")

    p = sub.add_parser("decode", parents=[common], help="Viterbi-decode a split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--split", choices=("train", "test"), default=None)

    p = sub.add_parser("score", parents=[common], help="phone error rate of a hypothesis file")
    p.add_argument("--hyp", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--frames", type=Path, help="frame-label sidecar for state accuracy")

    p = sub.add_parser("ablate", parents=[common], help="component ladder and aggregator sweep")
    p.add_argument("--corpus", type=Path, help="corpus directory (default: synthesise in memory)")
    p.add_argument("--which", choices=("ladder", "agg", "both"), default="both")

    sub.add_parser("report", parents=[common], help="tables and figures for runs under OUT")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.set_seed(args.seed)
        cfg.validate()
    out = args.out
    if args.command == "gen-corpus":
        cmd_gen_corpus(cfg, out)
    elif args.command == "train":
        cmd_train(cfg, args.corpus or out / "corpus", out, args.mode)
    elif args.command == "decode":
        split = args.split or cfg.decode.split
        path = cmd_decode(args.checkpoint, args.corpus or out / "corpus", split, out)
        print(f"hypotheses\t{path}")
    elif args.command == "score":
        cmd_score(args.hyp, args.manifest, args.frames)
    elif args.command == "ablate":
        cmd_ablate(cfg, args.corpus, out, args.which)
    elif args.command == "report":
        cmd_report(out)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MissingUtterance, UnknownSpeaker, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SenanError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
