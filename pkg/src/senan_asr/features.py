"""Front end: framing, MFCC, mean normalisation, speaker vectors, SpecAug."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .corpus import Utterance, _samples
from .errors import DataError, InvalidConfig, InvalidWidth, TooShort, UnknownSpeaker

LOG_FLOOR = 1e-10


class Kind(IntEnum):
    NOISY = 0
    CLEAN = 1
    NOISE = 2
    ENHANCED = 3
    NOISE_AWARE = 4
    INPUT = 5


@dataclass
class FeatureMatrix:
    data: np.ndarray
    kind: Kind = Kind.NOISY

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    n_ceps: int = 40
    spk_dim: int = 8
    low_hz: float = 20.0
    sample_rate: int = 16000

    def validate(self) -> None:
        if self.n_ceps > self.n_mels:
            raise InvalidConfig("n_ceps must not exceed n_mels")
        if self.frame_ms <= self.hop_ms:
            raise InvalidConfig("frame length must exceed hop")
        if self.spk_dim < 0 or self.n_mels < 1 or self.n_ceps < 1:
            raise InvalidConfig("feature dimensions must be positive")

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_ms * self.sample_rate / 1000))

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_fft(self) -> int:
        return 1 << (self.frame_len - 1).bit_length()


def frame_signal(w, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Hamming-windowed frames, shape ``[T, L]``."""
    x = _samples(w)
    L, H = cfg.frame_len, cfg.hop_len
    if len(x) < L:
        raise TooShort(f"{len(x)} samples is shorter than one {L}-sample frame")
    T = (len(x) - L) // H + 1
    idx = np.arange(L)[None, :] + H * np.arange(T)[:, None]
    return x[idx] * np.hamming(L)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, low_hz: float = 20.0) -> np.ndarray:
    """Triangular filters with unit peak, shape ``[n_mels, n_fft // 2 + 1]``."""
    high_hz = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    fb.setflags(write=False)
    return fb


def log_mel(w, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    frames = frame_signal(w, cfg)
    power = np.abs(np.fft.rfft(frames, cfg.n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.low_hz).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def mfcc(w, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return dct(log_mel(w, cfg), type=2, norm="ortho", axis=1)[:, : cfg.n_ceps]


def cmn(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    return f - f.mean(axis=0, keepdims=True)


class SpeakerTable:
    """Frozen unit-norm random vectors standing in for i-vectors."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._table: dict[str, np.ndarray] = {}

    def register(self, speaker: str) -> np.ndarray:
        if speaker not in self._table:
            rng = np.random.default_rng([self.seed, zlib.crc32(speaker.encode())])
            v = rng.standard_normal(self.dim)
            norm = np.linalg.norm(v)
            self._table[speaker] = v / norm if norm > 0 else v
        return self._table[speaker]

    def __contains__(self, speaker: str) -> bool:
        return speaker in self._table

    def lookup(self, speaker: str) -> np.ndarray:
        try:
            return self._table[speaker]
        except KeyError:
            raise UnknownSpeaker(speaker) from None


def speaker_embedding(speaker: str, table: SpeakerTable) -> np.ndarray:
    return table.lookup(speaker)


def assemble_noisy_features(mfcc_feats: np.ndarray, spk: np.ndarray) -> np.ndarray:
    mfcc_feats = np.asarray(mfcc_feats, dtype=np.float64)
    tail = np.broadcast_to(np.asarray(spk, dtype=np.float64), (mfcc_feats.shape[0], len(spk)))
    return np.concatenate([mfcc_feats, tail], axis=1)


def spec_augment(
    f: np.ndarray,
    n_time_masks: int,
    max_time_w: int,
    n_feat_masks: int,
    max_feat_w: int,
    rng: np.random.Generator,
    n_coeffs: int | None = None,
    fixed_width: bool = False,
) -> np.ndarray:
    """Mask random time and coefficient bands with the utterance mean.

    Feature masks only touch the first ``n_coeffs`` columns (all columns when
    None).  With ``fixed_width`` every band has exactly the maximum width.
    """
    f = np.asarray(f, dtype=np.float64)
    T, D = f.shape
    C = D if n_coeffs is None else n_coeffs
    if max_time_w < 0 or max_feat_w < 0 or max_time_w > T or max_feat_w > C:
        raise InvalidWidth(f"mask widths ({max_time_w}, {max_feat_w}) exceed extents ({T}, {C})")
    out = f.copy()
    mean = f.mean(axis=0)
    for _ in range(n_time_masks):
        w = max_time_w if fixed_width else int(rng.integers(0, max_time_w + 1))
        s = int(rng.integers(0, T - w + 1))
        out[s : s + w] = mean
    for _ in range(n_feat_masks):
        w = max_feat_w if fixed_width else int(rng.integers(0, max_feat_w + 1))
        s = int(rng.integers(0, C - w + 1))
        out[:, s : s + w] = mean[s : s + w]
    return out


@dataclass
class UtteranceFeatures:
    id: str
    x_nsy: np.ndarray  # cmn(mfcc(noisy)) with the speaker vector appended
    clean_target: np.ndarray
    noise_target: np.ndarray
    alignment: np.ndarray
    transcript: list[int]

    @property
    def frames(self) -> int:
        return self.x_nsy.shape[0]


def extract(utt: Utterance, cfg: FeatureConfig, speakers: SpeakerTable) -> UtteranceFeatures:
    spk = speakers.register(utt.speaker)
    x = assemble_noisy_features(cmn(mfcc(utt.noisy, cfg)), spk)
    clean = cmn(mfcc(utt.clean, cfg))
    noise = cmn(mfcc(utt.noise, cfg))
    if len(utt.alignment) != x.shape[0]:
        raise DataError(f"{utt.id}: alignment has {len(utt.alignment)} labels for {x.shape[0]} frames")
    return UtteranceFeatures(utt.id, x, clean, noise, np.asarray(utt.alignment), list(utt.transcript))


# ---------------------------------------------------------------------------
# Binary archive: int32 T, D, kind then T*D float64, all little-endian


def write_feature_matrix(path: Path, fm: FeatureMatrix) -> None:
    data = np.ascontiguousarray(fm.data, dtype="<f8")
    T, D = data.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3i", T, D, int(fm.kind)))
        fh.write(data.tobytes())


def read_feature_matrix(path: Path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    T, D, kind = struct.unpack("<3i", raw[:12])
    body = raw[12:]
    if T < 1 or D < 1 or len(body) != T * D * 8:
        raise DataError(f"{path}: header says {T}x{D}, body has {len(body)} bytes")
    return FeatureMatrix(np.frombuffer(body, dtype="<f8").reshape(T, D).astype(np.float64), Kind(kind))


def write_feature_archive(out_dir: Path, feats: dict[str, FeatureMatrix]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for uid in sorted(feats):
        p = out_dir / f"{uid}.feat"
        write_feature_matrix(p, feats[uid])
        lines.append(f"{uid}\t{p.name}\n")
    index = out_dir / "index.tsv"
    index.write_text("".join(lines))
    return index


def read_feature_archive(index: Path) -> dict[str, FeatureMatrix]:
    index = Path(index)
    out = {}
    for line in index.read_text().splitlines():
        if not line.strip():
            continue
        uid, _, rel = line.partition("\t")
        out[uid] = read_feature_matrix(index.parent / rel)
    return out
