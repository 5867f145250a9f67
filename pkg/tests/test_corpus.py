import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senan_asr import corpus as cp
from senan_asr.errors import (
    DataError,
    InvalidConfig,
    InvalidFactor,
    LengthMismatch,
    ZeroNoiseSignal,
    ZeroReferenceSignal,
)

SMALL = cp.CorpusConfig(num_train=12, num_test=4, seed=3)


@pytest.fixture(scope="module")
def train():
    return cp.generate_corpus(SMALL, "train")


def test_derive_noise_identity():
    x = np.random.default_rng(0).standard_normal(500)
    gain, n = cp.derive_noise(x, x)
    assert gain == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(n, 0.0, atol=1e-15)


def test_derive_noise_recovers_half_gain():
    rng = np.random.default_rng(1)
    clean = rng.standard_normal(4000)
    n = rng.standard_normal(4000)
    n -= (n @ clean) / (clean @ clean) * clean
    gain, est = cp.derive_noise(0.5 * clean + n, clean)
    assert abs(gain - 0.5) < 1e-9
    np.testing.assert_allclose(est, n, atol=1e-9)


def test_derive_noise_errors():
    with pytest.raises(ZeroReferenceSignal):
        cp.derive_noise(np.ones(10), np.zeros(10))
    with pytest.raises(LengthMismatch):
        cp.derive_noise(np.ones(10), np.ones(11))


def test_mix_at_snr_closed_forms():
    rng = np.random.default_rng(2)
    clean = rng.standard_normal(1000)
    noise = rng.standard_normal(1000)
    noise *= np.sqrt(np.mean(clean**2) / np.mean(noise**2))
    assert cp.noise_scale(clean, noise, 0.0) == pytest.approx(1.0, rel=1e-12)
    assert cp.noise_scale(clean, noise, 20.0) == pytest.approx(0.1, rel=1e-12)
    np.testing.assert_allclose(cp.mix_at_snr(clean, noise, 0.0), clean + noise, rtol=1e-12)
    with pytest.raises(ZeroNoiseSignal):
        cp.mix_at_snr(clean, np.zeros(1000), 5.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 40.0), st.integers(0, 10_000))
def test_mix_then_derive_round_trip(snr, seed):
    rng = np.random.default_rng(seed)
    clean = rng.standard_normal(800)
    noise = rng.standard_normal(800)
    noise -= (noise @ clean) / (clean @ clean) * clean
    gain, est = cp.derive_noise(cp.mix_at_snr(clean, noise, snr), clean)
    assert abs(cp.measure_snr(clean, est) - snr) < 1e-6
    assert abs(gain - 1.0) < 1e-9


def test_volume_perturb():
    x = np.random.default_rng(3).standard_normal(100)
    np.testing.assert_array_equal(cp.volume_perturb(x, 1.0), x)
    assert np.mean(cp.volume_perturb(x, 2.0) ** 2) == pytest.approx(4 * np.mean(x**2), rel=1e-12)
    with pytest.raises(InvalidFactor):
        cp.volume_perturb(x, 0.0)


def test_speed_perturb_lengths_and_errors():
    x = np.random.default_rng(4).standard_normal(16000)
    np.testing.assert_array_equal(cp.speed_perturb(x, 1.0), x)
    assert len(cp.speed_perturb(x, 0.9)) == 17778
    for bad in (0.4, 2.5):
        with pytest.raises(InvalidFactor):
            cp.speed_perturb(x, bad)


def test_speed_perturb_shifts_tone():
    sr = 16000
    t = np.arange(sr * 2) / sr
    out = cp.speed_perturb(np.sin(2 * np.pi * 100 * t), 1.1)
    spec = np.abs(np.fft.rfft(out, n=len(out) * 4))
    freqs = np.fft.rfftfreq(len(out) * 4, 1 / sr)
    assert abs(freqs[np.argmax(spec)] - 110.0) < 1.0


def test_generate_is_deterministic():
    a = cp.generate_corpus(SMALL, "train")
    b = cp.generate_corpus(SMALL, "train")
    for u, v in zip(a, b):
        assert u.noisy.samples.tobytes() == v.noisy.samples.tobytes()
        assert u.transcript == v.transcript
        np.testing.assert_array_equal(u.alignment, v.alignment)


def test_invalid_configs():
    with pytest.raises(InvalidConfig):
        cp.generate_corpus(cp.CorpusConfig(num_train=0))
    with pytest.raises(InvalidConfig):
        cp.generate_corpus(cp.CorpusConfig(snr_low=-1.0))
    with pytest.raises(InvalidConfig):
        cp.generate_corpus(cp.CorpusConfig(snr_low=30.0, snr_high=50.0))


def test_snr_range_respected():
    cfg = cp.CorpusConfig(num_train=10, num_test=0, snr_low=10.0, snr_high=20.0, seed=9)
    for u in cp.generate_corpus(cfg, "train"):
        gain, noise = cp.derive_noise(u.noisy, u.clean)
        snr = cp.measure_snr(u.clean, noise)
        assert 10.0 - 0.01 <= snr <= 20.0 + 0.01


def test_utterance_invariants(train):
    inv = train.inventory
    fl, hl = SMALL.frame_len, SMALL.hop_len
    seen = set()
    for u in train:
        assert len(u.clean) == len(u.noise) == len(u.noisy)
        np.testing.assert_allclose(u.noisy.samples, u.clean.samples + u.noise.samples, atol=1e-9)
        assert len(u.alignment) == cp.num_frames(len(u.noisy), fl, hl)
        assert u.alignment.min() >= 0 and u.alignment.max() < inv.num_states
        assert 3 <= len(u.transcript) <= 10
        phones = [inv.phone_of_state(s) for s in u.alignment]
        collapsed = [p for i, p in enumerate(phones) if i == 0 or p != phones[i - 1]]
        assert collapsed == u.transcript
        seen.update(u.transcript)
    assert len({u.id for u in train}) == len(train)
    assert seen == set(range(inv.num_phones))


def test_noise_derivation_exact_for_every_utterance(train):
    for u in train:
        gain, noise = cp.derive_noise(u.noisy, u.clean)
        assert abs(gain - 1.0) < 1e-9
        np.testing.assert_allclose(noise.samples, u.noise.samples, atol=1e-9)
        assert abs(cp.measure_snr(u.clean, noise) - u.snr_db) < 0.01


def test_triple_corpus(train):
    tripled = cp.triple_corpus(train, SMALL)
    assert len(tripled) == 3 * len(train)
    assert len({u.id for u in tripled}) == len(tripled)
    for u in tripled:
        assert len(u.alignment) == cp.num_frames(len(u.noisy), SMALL.frame_len, SMALL.hop_len)
        np.testing.assert_allclose(u.noisy.samples, u.clean.samples + u.noise.samples, atol=1e-9)


def test_inventory_state_ids():
    inv = cp.make_inventory(cp.CorpusConfig(num_phones=4, states_per_phone=3))
    assert inv.num_states == 12
    assert [inv.phone_of_state(inv.state_id(p, s)) for p in range(4) for s in range(3)] == [p for p in range(4) for _ in range(3)]


def test_disk_round_trip(tmp_path, train):
    small = cp.Corpus(train.utterances[:3], "train", train.seed, train.inventory)
    manifest = cp.write_corpus(small, tmp_path)
    lines = manifest.read_text().splitlines()
    assert all(len(line.split("\t")) == 8 for line in lines)
    assert (tmp_path / lines[0].split("\t")[6]).with_suffix(".raw.hdr").read_text().strip() == "sample_rate=16000"
    back = cp.read_corpus(tmp_path, "train")
    for u, v in zip(small, back):
        assert u.id == v.id and u.transcript == v.transcript and u.speaker == v.speaker
        np.testing.assert_array_equal(u.alignment, v.alignment)
        np.testing.assert_allclose(v.noisy.samples, u.noisy.samples, atol=1e-6)
        assert v.snr_db == pytest.approx(u.snr_db, abs=1e-6)


def test_bad_manifest(tmp_path):
    (tmp_path / "train.manifest.tsv").write_text("a\tb\tc\n")
    with pytest.raises(DataError):
        cp.read_corpus(tmp_path, "train")
