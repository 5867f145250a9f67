import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senan_asr import lfmmi as lf
from senan_asr import numerics as nx
from senan_asr.corpus import CorpusConfig, make_inventory
from senan_asr.errors import EmptyTranscript, NoPath, UnknownPhone

from oracles import brute_force_gamma, brute_force_logz, enumerate_paths, random_graph

INV1 = make_inventory(CorpusConfig(num_phones=3, states_per_phone=1))
INV2 = make_inventory(CorpusConfig(num_phones=3, states_per_phone=2))


def test_hmm_topology():
    g = lf.build_hmm(1, INV1)
    assert g.num_arcs == 2
    loops = [a for a in g.arcs() if a[0] == a[1]]
    assert len(loops) == 1
    # self-loop plus exit (final weight) make probability one
    assert math.exp(loops[0][3]) + math.exp(g.final_logw[loops[0][0]]) == pytest.approx(1.0, abs=1e-15)
    g2 = lf.build_hmm(2, INV2)
    assert g2.num_arcs == 4
    emit = [a for a in g2.arcs() if a[0] != g2.start]
    assert all(d >= s for s, d, *_ in emit)
    with pytest.raises(UnknownPhone):
        lf.build_hmm(3, INV1)


def test_phone_lm_rows_normalised():
    lm = lf.PhoneLm.train([[0, 1, 2], [2, 1], [1]], 3)
    np.testing.assert_allclose(np.exp(lm.logprob).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(lm.continuation(0)).sum(), 1.0, atol=1e-12)
    with pytest.raises(UnknownPhone):
        lf.PhoneLm.train([[5]], 3)


def test_numerator_single_phone_single_path():
    g = lf.build_numerator_graph([2], INV1)
    for T in (1, 4, 7):
        paths = enumerate_paths(g, np.zeros((T, 3)))
        assert len(paths) == 1
        assert paths[0][1] == [2] * T


@pytest.mark.parametrize("T", [2, 3, 5, 6])
def test_numerator_two_phone_path_count(T):
    g = lf.build_numerator_graph([0, 1], INV1)
    paths = enumerate_paths(g, np.zeros((T, 3)))
    assert len(paths) == math.comb(T - 1, 1)
    for _, labels in paths:
        first_b = labels.index(1)
        assert all(x == 0 for x in labels[:first_b]) and all(x == 1 for x in labels[first_b:])


def test_numerator_errors():
    with pytest.raises(EmptyTranscript):
        lf.build_numerator_graph([], INV1)
    with pytest.raises(UnknownPhone):
        lf.build_numerator_graph([0, 7], INV1)


def test_numerator_carries_lm_prior():
    lm = lf.PhoneLm.train([[0, 1], [1, 2]], 3)
    g = lf.build_numerator_graph([0, 1], INV1, lm)
    T = 4
    paths = enumerate_paths(g, np.zeros((T, 3)))
    # each path: prior + HMM transitions (T-2 self-loops, one exit, one final exit)
    expect = lm.sequence_logprob([0, 1]) + T * math.log(0.5)
    for s, _ in paths:
        assert s == pytest.approx(expect, abs=1e-12)


def test_denominator_structure_and_uniform_lm():
    P = 4
    inv = make_inventory(CorpusConfig(num_phones=P))
    g = lf.build_denominator_graph(lf.PhoneLm.uniform(P), inv)
    assert g.num_states == 1 + P * inv.states_per_phone
    between = [w for s, d, _, w, _ in g.arcs() if s != g.start and s != d]
    np.testing.assert_allclose(between, math.log(0.5) + math.log(1.0 / P), atol=1e-12)


@pytest.mark.parametrize("inv", [INV1, INV2])
@pytest.mark.parametrize("T", [1, 2, 5, 30])
def test_denominator_normalised(inv, T):
    lm = lf.PhoneLm.train([[0, 1, 2], [2, 0], [1, 1, 0]], 3)
    g = lf.build_denominator_graph(lm, inv)
    log_z, _ = lf.forward_backward(g, np.zeros((T, inv.num_states)))
    assert abs(log_z) < 1e-9


def test_single_path_logz_exact():
    g = lf.build_numerator_graph([1], INV1)
    logp = np.random.default_rng(0).standard_normal((5, 3))
    log_z, gamma = lf.forward_backward(g, logp)
    expect = logp[:, 1].sum() + 4 * math.log(0.5) + math.log(0.5)
    assert log_z == pytest.approx(expect, abs=1e-12)
    np.testing.assert_allclose(gamma[:, 1], 1.0, atol=1e-12)
    best, labels, phones = lf.viterbi_decode(g, logp, INV1)
    assert best == pytest.approx(log_z, abs=1e-12)
    assert labels == [1] * 5 and phones == [1]


def test_no_path_cases():
    g = lf.build_numerator_graph([0, 1, 2], INV1)
    with pytest.raises(NoPath):
        lf.forward_backward(g, np.zeros((2, 3)))
    with pytest.raises(NoPath):
        lf.viterbi_decode(g, np.zeros((0, 3)))


def test_random_graphs_match_enumeration():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 120:
        g = random_graph(rng)
        K = int(g.label.max()) + 1
        T = int(rng.integers(1, 7))
        logp = rng.normal(0.0, 2.0, (T, K))
        paths = enumerate_paths(g, logp)
        if not paths:
            with pytest.raises(NoPath):
                lf.forward_backward(g, logp)
            continue
        log_z, gamma = lf.forward_backward(g, logp)
        assert abs(log_z - brute_force_logz(paths)) < 1e-9
        np.testing.assert_allclose(gamma, brute_force_gamma(paths, T, K), atol=1e-9)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
        best, labels, _ = lf.viterbi_decode(g, logp)
        assert abs(best - max(s for s, _ in paths)) < 1e-9
        assert best <= log_z + 1e-12
        checked += 1


def test_lfmmi_cancellation():
    lm = lf.PhoneLm.train([[0, 1, 2]], 3)
    den = lf.build_denominator_graph(lm, INV1)
    z = nx.parameter(np.random.default_rng(3).standard_normal((6, 3)))
    f = lf.lfmmi_objective(z, den, den)
    nx.backward(f)
    assert abs(float(f.data)) <= 1e-12
    assert np.max(np.abs(z.grad)) <= 1e-12


def test_lfmmi_gradient_finite_difference():
    lm = lf.PhoneLm.train([[0, 1]], 2)
    inv = make_inventory(CorpusConfig(num_phones=2))
    num = lf.build_numerator_graph([0, 1], inv, lm)
    den = lf.build_denominator_graph(lm, inv)
    z0 = np.random.default_rng(4).standard_normal((4, 2))
    z = nx.parameter(z0)
    nx.backward(lf.lfmmi_objective(z, num, den))
    fd = nx.numeric_grad(lambda v: float(lf.lfmmi_objective(nx.constant(v), num, den).data), z0)
    assert np.abs(fd - z.grad).max() / np.abs(fd).max() < 1e-6


def test_raising_numerator_label_raises_objective():
    inv = make_inventory(CorpusConfig(num_phones=3))
    lm = lf.PhoneLm.train([[1]], 3)
    num = lf.build_numerator_graph([1], inv, lm)
    den = lf.build_denominator_graph(lm, inv)
    z = np.random.default_rng(5).standard_normal((5, 3))
    f0 = float(lf.lfmmi_objective(nx.constant(z), num, den).data)
    z[2, 1] += 0.5
    assert float(lf.lfmmi_objective(nx.constant(z), num, den).data) > f0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_frame_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    lm = lf.PhoneLm.train([[0, 2, 1], [1, 0]], 3)
    num = lf.build_numerator_graph([0, 2], INV2, lm)
    den = lf.build_denominator_graph(lm, INV2)
    z = rng.standard_normal((6, 6))
    t = int(rng.integers(6))
    shifted = z.copy()
    shifted[t] += c
    for g in (num, den):
        a, ga = lf.forward_backward(g, z)
        b, gb = lf.forward_backward(g, shifted)
        assert b - a == pytest.approx(c, abs=1e-9)
        np.testing.assert_allclose(ga, gb, atol=1e-9)
    fa = float(lf.lfmmi_objective(nx.constant(z), num, den).data)
    fb = float(lf.lfmmi_objective(nx.constant(shifted), num, den).data)
    assert abs(fa - fb) < 1e-9


def test_viterbi_recovers_repeated_phones():
    g = lf.build_denominator_graph(lf.PhoneLm.uniform(3), INV1)
    logp = np.full((6, 3), -20.0)
    logp[:2, 0] = logp[2:4, 0] = logp[4:, 2] = 0.0
    _, labels, phones = lf.viterbi_decode(g, logp, INV1)
    assert labels == [0, 0, 0, 0, 2, 2]
    assert phones[-1] == 2 and set(phones) <= {0, 2}


def test_graph_text_round_trip():
    lm = lf.PhoneLm.train([[0, 1, 2], [2, 1]], 3)
    for g in (lf.build_denominator_graph(lm, INV2), lf.build_numerator_graph([2, 0, 1], INV2, lm)):
        text = lf.serialize_graph(g)
        assert text.splitlines()[0] == f"start {g.start}"
        back = lf.parse_graph(text)
        assert back.same_as(g)
        assert lf.serialize_graph(back) == text
