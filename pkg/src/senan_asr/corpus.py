"""Synthetic paired clean/noisy corpus with exact frame-state alignments.

Each phone is rendered as a short bundle of sinusoids whose frequencies come
from a per-phone prototype, warped per speaker and jittered per segment.  A
noise signal is orthogonalised against the clean signal before mixing so the
least-squares gain fit in :func:`derive_noise` recovers it exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import (
    DataError,
    InvalidConfig,
    InvalidFactor,
    LengthMismatch,
    ZeroNoiseSignal,
    ZeroReferenceSignal,
)

log = logging.getLogger(__name__)

NOISE_TYPES = ("white", "hum", "modulated")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2))


def _samples(w) -> np.ndarray:
    return np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64)


def _like(template, samples: np.ndarray):
    if isinstance(template, Waveform):
        return Waveform(samples, template.sample_rate)
    return samples


@dataclass
class PhoneInventory:
    prototypes: list[tuple[np.ndarray, np.ndarray]]  # (frequencies Hz, amplitudes) per phone
    states_per_phone: int = 1

    @property
    def num_phones(self) -> int:
        return len(self.prototypes)

    @property
    def phones(self) -> list[int]:
        return list(range(self.num_phones))

    @property
    def num_states(self) -> int:
        return self.num_phones * self.states_per_phone

    def state_id(self, phone: int, sub: int) -> int:
        return phone * self.states_per_phone + sub

    def phone_of_state(self, state: int) -> int:
        return state // self.states_per_phone


@dataclass
class Utterance:
    id: str
    speaker: str
    clean: Waveform
    noise: Waveform
    noisy: Waveform
    transcript: list[int]
    alignment: np.ndarray
    snr_db: float
    # sample boundaries of phone segments, len(transcript) + 1 entries
    boundaries: np.ndarray | None = None
    noise_type: str = ""


@dataclass
class Corpus:
    utterances: list[Utterance]
    split: str
    seed: int
    inventory: PhoneInventory | None = None

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.utterances}


@dataclass
class CorpusConfig:
    num_train: int = 200
    num_test: int = 50
    snr_low: float = 0.0
    snr_high: float = 10.0
    sample_rate: int = 16000
    num_phones: int = 10
    states_per_phone: int = 1
    num_speakers: int = 8
    min_phones: int = 3
    max_phones: int = 10
    min_seg_ms: float = 80.0
    max_seg_ms: float = 200.0
    noise_types: tuple[str, ...] = NOISE_TYPES
    excitation_db: float = -30.0
    seed: int = 0
    frame_ms: float = 25.0
    hop_ms: float = 10.0

    def validate(self) -> None:
        if self.num_train < 1 or self.num_test < 0:
            raise InvalidConfig("corpus needs at least one training utterance")
        if not (0.0 <= self.snr_low <= self.snr_high <= 40.0):
            raise InvalidConfig(f"SNR range [{self.snr_low}, {self.snr_high}] outside [0, 40] dB")
        if self.num_phones < 2 or self.states_per_phone < 1:
            raise InvalidConfig("need at least two phones and one state per phone")
        if not (1 <= self.min_phones <= self.max_phones):
            raise InvalidConfig("bad phone-count range")
        if not (0 < self.min_seg_ms <= self.max_seg_ms):
            raise InvalidConfig("bad segment-duration range")
        if not self.noise_types or any(n not in NOISE_TYPES for n in self.noise_types):
            raise InvalidConfig(f"noise types must be drawn from {NOISE_TYPES}")
        if self.num_speakers < 1:
            raise InvalidConfig("need at least one speaker")
        if self.min_seg_ms * self.states_per_phone < self.hop_ms:
            raise InvalidConfig("segments shorter than one frame hop per state")

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))


# ---------------------------------------------------------------------------
# Signal-level operations


def derive_noise(noisy, clean) -> tuple[float, object]:
    """Fit a scalar gain of ``clean`` to ``noisy`` and return the residual noise."""
    y, x = _samples(noisy), _samples(clean)
    if len(y) != len(x):
        raise LengthMismatch(f"noisy has {len(y)} samples, clean has {len(x)}")
    energy = float(x @ x)
    if energy == 0.0:
        raise ZeroReferenceSignal("clean reference is identically zero")
    gain = float(y @ x) / energy
    return gain, _like(noisy, y - gain * x)


def measure_snr(clean, noise) -> float:
    pc, pn = np.mean(_samples(clean) ** 2), np.mean(_samples(noise) ** 2)
    return float(10.0 * np.log10(pc / pn))


def noise_scale(clean, noise, snr_db: float) -> float:
    pc = float(np.mean(_samples(clean) ** 2))
    pn = float(np.mean(_samples(noise) ** 2))
    if pn == 0.0:
        raise ZeroNoiseSignal("noise has zero power")
    return math.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(clean, noise, snr_db: float):
    x, n = _samples(clean), _samples(noise)
    if len(x) != len(n):
        raise LengthMismatch("clean and noise lengths differ")
    a = noise_scale(x, n, snr_db)
    return _like(clean, x + a * n)


def volume_perturb(w, factor: float):
    if not factor > 0:
        raise InvalidFactor(f"volume factor must be positive, got {factor}")
    return _like(w, _samples(w) * factor)


def speed_perturb(w, factor: float):
    """Resample by linear interpolation to ``round(len / factor)`` samples."""
    if not 0.5 <= factor <= 2.0:
        raise InvalidFactor(f"speed factor {factor} outside [0.5, 2.0]")
    x = _samples(w)
    if factor == 1.0:
        return _like(w, x.copy())
    n_out = int(round(len(x) / factor))
    pos = np.arange(n_out) * factor
    return _like(w, np.interp(pos, np.arange(len(x)), x))


def num_frames(n_samples: int, frame_len: int, hop_len: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop_len + 1


def alignment_from_boundaries(
    boundaries: np.ndarray, transcript: list[int], n_samples: int, frame_len: int, hop_len: int, states_per_phone: int = 1
) -> np.ndarray:
    """Label every frame with the state whose span contains the frame centre."""
    T = num_frames(n_samples, frame_len, hop_len)
    centres = np.arange(T) * hop_len + frame_len / 2.0
    seg = np.clip(np.searchsorted(boundaries, centres, side="right") - 1, 0, len(transcript) - 1)
    start, end = boundaries[seg], boundaries[seg + 1]
    frac = (centres - start) / np.maximum(end - start, 1)
    sub = np.clip((frac * states_per_phone).astype(np.int64), 0, states_per_phone - 1)
    phones = np.asarray(transcript, dtype=np.int64)[seg]
    return phones * states_per_phone + sub


def boundaries_from_alignment(alignment: np.ndarray, states_per_phone: int, frame_len: int, hop_len: int, n_samples: int):
    """Approximate segment boundaries (in samples) from a frame alignment."""
    phones = np.asarray(alignment) // states_per_phone
    change = np.flatnonzero(np.diff(phones) != 0) + 1
    starts = [0] + [int(t * hop_len + frame_len / 2 - hop_len / 2) for t in change]
    transcript = [int(phones[0])] + [int(phones[t]) for t in change]
    return np.array(starts + [n_samples], dtype=np.float64), transcript


# ---------------------------------------------------------------------------
# Generation


def make_inventory(cfg: CorpusConfig) -> PhoneInventory:
    rng = np.random.default_rng([cfg.seed, 7919])
    nyq = cfg.sample_rate / 2
    # phones share a coarse frequency grid so neighbours overlap spectrally
    grid = np.geomspace(250.0, min(4000.0, 0.45 * nyq), 12)
    protos = []
    seen = set()
    for _ in range(cfg.num_phones):
        while True:
            pick = tuple(sorted(rng.choice(len(grid), size=3, replace=False)))
            if pick not in seen:
                seen.add(pick)
                break
        freqs = grid[list(pick)] * rng.uniform(0.97, 1.03, size=3)
        amps = rng.uniform(0.4, 1.0, size=3)
        protos.append((freqs, amps / amps.sum()))
    return PhoneInventory(protos, cfg.states_per_phone)


def _speaker_params(cfg: CorpusConfig, speaker: int) -> tuple[float, float]:
    rng = np.random.default_rng([cfg.seed, 104729, speaker])
    return float(rng.uniform(0.93, 1.07)), float(rng.uniform(0.5, 1.5))


def _transcript(rng: np.random.Generator, cfg: CorpusConfig, must_have: int | None) -> list[int]:
    n = int(rng.integers(cfg.min_phones, cfg.max_phones + 1))
    seq = [int(rng.integers(cfg.num_phones))]
    while len(seq) < n:
        p = int(rng.integers(cfg.num_phones - 1))
        seq.append(p if p < seq[-1] else p + 1)  # no immediate repeats
    if must_have is not None and must_have not in seq:
        for pos in rng.permutation(n):
            left = seq[pos - 1] if pos > 0 else None
            right = seq[pos + 1] if pos + 1 < n else None
            if must_have not in (left, right):
                seq[pos] = must_have
                break
    return seq


def _render_noise(rng: np.random.Generator, kind: str, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "hum":
        base = rng.uniform(48.0, 52.0)
        out = np.zeros(n)
        for k in range(1, 41):
            out += np.sin(2 * np.pi * base * k * t + rng.uniform(0, 2 * np.pi)) / k**0.5
        return out + 0.1 * rng.standard_normal(n)
    if kind == "modulated":
        white = rng.standard_normal(n)
        # one-pole low-pass colours the noise toward the speech band
        coloured = lfilter([1.0], [1.0, -0.7], white)
        rate = rng.uniform(2.0, 8.0)
        env = 1.0 + 0.8 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        return coloured * env
    raise InvalidConfig(f"unknown noise type {kind!r}")


def _render_clean(rng, cfg: CorpusConfig, inv: PhoneInventory, transcript: list[int], speaker: int):
    sr = cfg.sample_rate
    warp, gain = _speaker_params(cfg, speaker)
    durs = rng.uniform(cfg.min_seg_ms, cfg.max_seg_ms, size=len(transcript))
    lens = np.maximum(np.round(durs * sr / 1000).astype(np.int64), 1)
    bounds = np.concatenate([[0], np.cumsum(lens)]).astype(np.float64)
    n = int(bounds[-1])
    x = np.zeros(n)
    ramp = int(0.01 * sr)
    for i, p in enumerate(transcript):
        s, e = int(bounds[i]), int(bounds[i + 1])
        m = e - s
        t = np.arange(m) / sr
        freqs, amps = inv.prototypes[p]
        seg = np.zeros(m)
        for f, a in zip(freqs, amps):
            f_eff = f * warp * rng.uniform(0.98, 1.02)
            seg += a * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * f_eff * t + rng.uniform(0, 2 * np.pi))
        r = min(ramp, m // 2)
        if r > 0:
            win = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            seg[:r] *= win
            seg[m - r:] *= win[::-1]
        x[s:e] = seg
    x *= gain
    excitation = rng.standard_normal(n) * math.sqrt(np.mean(x**2) * 10 ** (cfg.excitation_db / 10))
    return x + excitation, bounds


def generate_utterance(cfg: CorpusConfig, inv: PhoneInventory, split: str, index: int) -> Utterance:
    """Pure function of (config, split, index)."""
    split_code = 0 if split == "train" else 1
    rng = np.random.default_rng([cfg.seed, split_code, index])
    speaker = int(rng.integers(cfg.num_speakers))
    must = index % cfg.num_phones if split == "train" else None
    transcript = _transcript(rng, cfg, must)
    clean, bounds = _render_clean(rng, cfg, inv, transcript, speaker)
    kind = cfg.noise_types[int(rng.integers(len(cfg.noise_types)))]
    raw = _render_noise(rng, kind, len(clean), cfg.sample_rate)
    raw = raw - (raw @ clean) / (clean @ clean) * clean
    snr = float(rng.uniform(cfg.snr_low, cfg.snr_high))
    noise = noise_scale(clean, raw, snr) * raw
    noisy = clean + noise
    ali = alignment_from_boundaries(bounds, transcript, len(clean), cfg.frame_len, cfg.hop_len, cfg.states_per_phone)
    sr = cfg.sample_rate
    return Utterance(
        id=f"{split}_{index:05d}",
        speaker=f"spk{speaker:03d}",
        clean=Waveform(clean, sr),
        noise=Waveform(noise, sr),
        noisy=Waveform(noisy, sr),
        transcript=transcript,
        alignment=ali,
        snr_db=snr,
        boundaries=bounds,
        noise_type=kind,
    )


def generate_corpus(cfg: CorpusConfig, split: str = "train") -> Corpus:
    cfg.validate()
    if split not in ("train", "test"):
        raise InvalidConfig(f"split must be train or test, got {split!r}")
    inv = make_inventory(cfg)
    count = cfg.num_train if split == "train" else cfg.num_test
    utts = [generate_utterance(cfg, inv, split, i) for i in range(count)]
    return Corpus(utts, split, cfg.seed, inv)


def perturb_utterance(utt: Utterance, cfg: CorpusConfig, speed: float = 1.0, volume: float = 1.0, suffix: str = "") -> Utterance:
    clean = volume_perturb(speed_perturb(utt.clean, speed), volume)
    noise = volume_perturb(speed_perturb(utt.noise, speed), volume)
    noisy = Waveform(clean.samples + noise.samples, clean.sample_rate)
    n = len(clean)
    if utt.boundaries is not None:
        bounds, transcript = utt.boundaries, utt.transcript
    else:
        bounds, transcript = boundaries_from_alignment(
            utt.alignment, cfg.states_per_phone, cfg.frame_len, cfg.hop_len, len(utt.clean)
        )
    bounds = np.minimum(np.asarray(bounds) / speed, n)
    bounds[-1] = n
    ali = alignment_from_boundaries(bounds, transcript, n, cfg.frame_len, cfg.hop_len, cfg.states_per_phone)
    return replace(
        utt,
        id=utt.id + suffix,
        clean=clean,
        noise=noise,
        noisy=noisy,
        alignment=ali,
        boundaries=bounds,
        snr_db=measure_snr(clean, noise),
    )


def triple_corpus(corpus: Corpus, cfg: CorpusConfig, speeds=(0.9, 1.1)) -> Corpus:
    """Original utterances plus one speed-perturbed and one volume-perturbed copy each."""
    rng = np.random.default_rng([corpus.seed, 31337])
    out = []
    for utt in corpus.utterances:
        speed = float(speeds[int(rng.integers(len(speeds)))])
        volume = float(rng.uniform(0.125, 2.0))
        out.append(utt)
        out.append(perturb_utterance(utt, cfg, speed=speed, suffix=f"-sp{speed:g}"))
        out.append(perturb_utterance(utt, cfg, volume=volume, suffix="-vp"))
    return Corpus(out, corpus.split, corpus.seed, corpus.inventory)


# ---------------------------------------------------------------------------
# On-disk format


def write_waveform(path: Path, w: Waveform) -> None:
    path = Path(path)
    w.samples.astype("<f4").tofile(path)
    Path(str(path) + ".hdr").write_text(f"sample_rate={w.sample_rate}\n")


def read_waveform(path: Path) -> Waveform:
    path = Path(path)
    try:
        header = Path(str(path) + ".hdr").read_text().strip()
        key, _, value = header.partition("=")
        if key != "sample_rate":
            raise DataError(f"bad waveform header in {path}.hdr")
        data = np.fromfile(path, dtype="<f4").astype(np.float64)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    return Waveform(data, int(value))


MANIFEST = "manifest.tsv"


def write_corpus(corpus: Corpus, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    wav_dir = out_dir / corpus.split
    wav_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in corpus.utterances:
        paths = {}
        for kind in ("clean", "noise", "noisy"):
            p = wav_dir / f"{u.id}.{kind}.raw"
            write_waveform(p, getattr(u, kind))
            paths[kind] = p.relative_to(out_dir)
        ali = wav_dir / f"{u.id}.ali"
        ali.write_text("".join(f"{int(s)}\n" for s in u.alignment))
        lines.append(
            "\t".join(
                [
                    u.id,
                    u.speaker,
                    f"{u.snr_db:.6f}",
                    " ".join(str(p) for p in u.transcript),
                    str(paths["clean"]),
                    str(paths["noise"]),
                    str(paths["noisy"]),
                    str(ali.relative_to(out_dir)),
                ]
            )
        )
    manifest = out_dir / f"{corpus.split}.{MANIFEST}"
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


def read_manifest(path: Path) -> list[dict]:
    path = Path(path)
    rows = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(str(exc)) from exc
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 8:
            raise DataError(f"{path}:{n}: expected 8 tab-separated columns, got {len(cols)}")
        uid, spk, snr, trans, pc, pn, py, pa = cols
        rows.append(
            dict(
                id=uid,
                speaker=spk,
                snr_db=float(snr),
                transcript=[int(t) for t in trans.split()],
                clean=pc,
                noise=pn,
                noisy=py,
                alignment=pa,
            )
        )
    return rows


def read_corpus(root: Path, split: str, inventory: PhoneInventory | None = None, seed: int = 0) -> Corpus:
    root = Path(root)
    utts = []
    for row in read_manifest(root / f"{split}.{MANIFEST}"):
        try:
            ali = np.array([int(s) for s in (root / row["alignment"]).read_text().split()], dtype=np.int64)
        except (OSError, ValueError) as exc:
            raise DataError(f"alignment for {row['id']}: {exc}") from exc
        clean = read_waveform(root / row["clean"])
        noise = read_waveform(root / row["noise"])
        noisy = read_waveform(root / row["noisy"])
        utts.append(Utterance(row["id"], row["speaker"], clean, noise, noisy, row["transcript"], ali, row["snr_db"]))
    return Corpus(utts, split, seed, inventory)
