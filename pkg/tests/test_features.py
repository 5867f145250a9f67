import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.fft import idct

from senan_asr import features as ft
from senan_asr.corpus import CorpusConfig, generate_corpus
from senan_asr.errors import DataError, InvalidWidth, TooShort, UnknownSpeaker

CFG = ft.FeatureConfig()


def test_frame_counts():
    assert ft.frame_signal(np.zeros(16000)).shape == (98, 400)
    assert ft.frame_signal(np.zeros(400)).shape == (1, 400)
    with pytest.raises(TooShort):
        ft.frame_signal(np.zeros(399))


def test_frames_are_hamming_windowed():
    x = np.arange(1000.0)
    frames = ft.frame_signal(x)
    np.testing.assert_allclose(frames[1], x[160:560] * np.hamming(400), rtol=1e-15)


def test_mel_scale_round_trip():
    f = np.array([0.0, 20.0, 700.0, 4000.0, 8000.0])
    np.testing.assert_allclose(ft.mel_to_hz(ft.hz_to_mel(f)), f, atol=1e-9)
    assert ft.hz_to_mel(700.0) == pytest.approx(2595.0 * np.log10(2.0))


def test_filterbank_shape_and_peaks():
    fb = ft.mel_filterbank(40, 512, 16000)
    assert fb.shape == (40, 257)
    assert fb.min() >= 0.0 and fb.max() <= 1.0 + 1e-12
    assert np.all(fb.sum(axis=1) > 0)


def test_silence_gives_identical_floor_rows():
    out = ft.mfcc(np.zeros(4000))
    np.testing.assert_array_equal(out, np.broadcast_to(out[0], out.shape))
    assert out[0, 0] == pytest.approx(np.log(1e-10) * np.sqrt(40), rel=1e-12)
    np.testing.assert_allclose(out[0, 1:], 0.0, atol=1e-9)


def test_dct_of_constant_log_mel():
    # a constant log-mel row only excites c0, with value c * sqrt(n_mels)
    from scipy.fft import dct

    row = np.full((1, 40), 3.0)
    out = dct(row, type=2, norm="ortho", axis=1)
    assert out[0, 0] == pytest.approx(3.0 * np.sqrt(40))
    np.testing.assert_allclose(out[0, 1:], 0.0, atol=1e-12)


def test_inverse_dct_recovers_log_mel():
    w = np.random.default_rng(0).standard_normal(3200)
    lm = ft.log_mel(w)
    c = ft.mfcc(w)
    np.testing.assert_allclose(idct(c, type=2, norm="ortho", axis=1), lm, atol=1e-9)


def test_amplitude_scaling_moves_only_c0():
    w = np.random.default_rng(1).standard_normal(4000)
    a, b = ft.mfcc(w), ft.mfcc(3.0 * w)
    shift = b[:, 0] - a[:, 0]
    np.testing.assert_allclose(shift, shift[0], atol=1e-6)
    assert shift[0] == pytest.approx(np.log(9.0) * np.sqrt(40), rel=1e-9)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-6)


def test_cmn_cases():
    np.testing.assert_array_equal(ft.cmn(np.array([[1.0, 2.0]])), [[0.0, 0.0]])
    v = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(ft.cmn(np.vstack([v, -v])), np.vstack([v, -v]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 8)), elements=st.floats(-1e3, 1e3)))
def test_cmn_zero_mean_and_idempotent(f):
    once = ft.cmn(f)
    assert np.max(np.abs(once.mean(axis=0))) < 1e-9
    np.testing.assert_allclose(ft.cmn(once), once, atol=1e-9)


def test_cmn_idempotent_exact_on_random():
    f = np.random.default_rng(2).standard_normal((50, 40))
    once = ft.cmn(f)
    assert np.max(np.abs(once.mean(axis=0))) < 1e-12
    twice = ft.cmn(once)
    np.testing.assert_allclose(twice, once, rtol=0, atol=1e-15)


def test_speaker_table():
    table = ft.SpeakerTable(8, seed=0)
    v = table.register("spk001")
    np.testing.assert_array_equal(ft.speaker_embedding("spk001", table), v)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    other = ft.SpeakerTable(8, seed=0)
    other.register("spk999")
    np.testing.assert_array_equal(other.register("spk001"), v)
    with pytest.raises(UnknownSpeaker):
        table.lookup("nobody")


def test_assemble_noisy_features():
    m = np.random.default_rng(3).standard_normal((98, 40))
    spk = np.random.default_rng(4).standard_normal(8)
    x = ft.assemble_noisy_features(m, spk)
    assert x.shape == (98, 48)
    np.testing.assert_array_equal(x[17], np.concatenate([m[17], spk]))
    np.testing.assert_array_equal(ft.assemble_noisy_features(m, np.zeros(8))[:, 40:], 0.0)


def test_spec_augment_identity_and_degenerate():
    f = np.random.default_rng(5).standard_normal((30, 10))
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(ft.spec_augment(f, 0, 5, 0, 3, rng), f)
    out = ft.spec_augment(f, 1, 30, 0, 0, rng, fixed_width=True)
    np.testing.assert_allclose(out, np.broadcast_to(f.mean(axis=0), f.shape), rtol=1e-15)
    with pytest.raises(InvalidWidth):
        ft.spec_augment(f, 1, 31, 0, 0, rng)


def test_spec_augment_leaves_input_and_outside_bands():
    f = np.random.default_rng(6).standard_normal((40, 12))
    keep = f.copy()
    out = ft.spec_augment(f, 2, 6, 2, 3, np.random.default_rng(1), n_coeffs=8)
    np.testing.assert_array_equal(f, keep)
    changed = out != f
    rows = changed.all(axis=1)
    cols = changed.all(axis=0)
    # every changed entry lies in a fully masked row or a fully masked column
    assert np.all(~changed | rows[:, None] | cols[None, :])
    # speaker columns are only touched by time masks
    assert not cols[8:].any()
    assert np.all(~changed[:, 8:] | rows[:, None])


def test_spec_augment_masked_fraction_monte_carlo():
    T, W = 100, 20
    f = np.random.default_rng(7).standard_normal((T, 4))
    rng = np.random.default_rng(123)
    frac = [np.mean(np.any(ft.spec_augment(f, 1, W, 0, 0, rng) != f, axis=1)) for _ in range(1000)]
    expected = W / (2 * T)
    assert abs(np.mean(frac) - expected) < 0.1 * expected


def test_extract_shapes():
    cfg = CorpusConfig(num_train=2, num_test=0, seed=1)
    utt = generate_corpus(cfg, "train").utterances[0]
    feats = ft.extract(utt, CFG, ft.SpeakerTable(8))
    assert feats.x_nsy.shape == (len(utt.alignment), 48)
    assert feats.clean_target.shape == feats.noise_target.shape == (len(utt.alignment), 40)
    np.testing.assert_allclose(feats.x_nsy[:, :40].mean(axis=0), 0.0, atol=1e-12)


def test_feature_archive_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    feats = {f"u{i}": ft.FeatureMatrix(rng.standard_normal((5 + i, 3)), ft.Kind.CLEAN) for i in range(3)}
    index = ft.write_feature_archive(tmp_path, feats)
    back = ft.read_feature_archive(index)
    assert sorted(back) == sorted(feats)
    for k in feats:
        np.testing.assert_array_equal(back[k].data, feats[k].data)
        assert back[k].kind == ft.Kind.CLEAN
    raw = (tmp_path / "u0.feat").read_bytes()
    (tmp_path / "u0.feat").write_bytes(raw[:-8])
    with pytest.raises(DataError):
        ft.read_feature_archive(index)
