"""Lattice-free MMI: phone graphs, log-space forward-backward, and Viterbi.

Graphs are acceptors whose arcs all emit one acoustic label (no epsilons).
A state means "the last emitted label led here"; the start state has emitted
nothing yet.  Each HMM state has a self-loop and a forward transition, both
with probability one half.  Arcs that enter the first state of a phone carry
that phone in ``phone`` so decoding can recover phone sequences even when a
phone follows itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .corpus import PhoneInventory
from .errors import EmptyTranscript, NoPath, ShapeMismatch, UnknownPhone
from .numerics import Value

LOG_HALF = math.log(0.5)
NEG_INF = -np.inf


@dataclass
class Graph:
    num_states: int
    start: int
    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    logw: np.ndarray
    final_logw: np.ndarray
    phone: np.ndarray = field(default=None)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        self.logw = np.asarray(self.logw, dtype=np.float64)
        self.final_logw = np.asarray(self.final_logw, dtype=np.float64)
        if self.phone is None:
            self.phone = np.full(len(self.src), -1, dtype=np.int64)
        self.phone = np.asarray(self.phone, dtype=np.int64)
        n = self.num_states
        if len(self.final_logw) != n or not 0 <= self.start < n:
            raise ValueError("graph start/final arrays inconsistent with num_states")
        if len(self.src) and (self.src.max() >= n or self.dst.max() >= n or min(self.src.min(), self.dst.min()) < 0):
            raise ValueError("arc endpoint out of range")

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    def arcs(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.label.tolist(), self.logw.tolist(), self.phone.tolist()))

    def same_as(self, other: "Graph") -> bool:
        return (
            self.num_states == other.num_states
            and self.start == other.start
            and all(
                np.array_equal(a, b)
                for a, b in [
                    (self.src, other.src),
                    (self.dst, other.dst),
                    (self.label, other.label),
                    (self.logw, other.logw),
                    (self.final_logw, other.final_logw),
                    (self.phone, other.phone),
                ]
            )
        )


class _GraphBuilder:
    def __init__(self):
        self.n = 0
        self.arcs: list[tuple[int, int, int, float, int]] = []
        self.finals: dict[int, float] = {}

    def state(self) -> int:
        self.n += 1
        return self.n - 1

    def arc(self, s, d, label, w, phone=-1):
        self.arcs.append((s, d, label, float(w), phone))

    def build(self, start: int = 0) -> Graph:
        final = np.full(self.n, NEG_INF)
        for s, w in self.finals.items():
            final[s] = w
        if self.arcs:
            src, dst, lab, w, ph = (list(c) for c in zip(*self.arcs))
        else:
            src = dst = lab = w = ph = []
        return Graph(self.n, start, src, dst, lab, w, final, ph)


# ---------------------------------------------------------------------------
# Phone language model


@dataclass
class PhoneLm:
    """Add-one smoothed phone bigram.

    ``logprob[h, n]``: history ``h`` in phones plus the start symbol (index P),
    next symbol ``n`` in phones plus the end symbol (index P).
    """

    num_phones: int
    logprob: np.ndarray

    @classmethod
    def train(cls, transcripts: Sequence[Sequence[int]], num_phones: int) -> "PhoneLm":
        P = num_phones
        counts = np.ones((P + 1, P + 1))
        for seq in transcripts:
            hist = P
            for p in seq:
                if not 0 <= p < P:
                    raise UnknownPhone(p)
                counts[hist, p] += 1
                hist = p
            counts[hist, P] += 1
        return cls(P, np.log(counts / counts.sum(axis=1, keepdims=True)))

    @classmethod
    def uniform(cls, num_phones: int) -> "PhoneLm":
        P = num_phones
        return cls(P, np.full((P + 1, P + 1), -math.log(P + 1)))

    @property
    def start(self) -> int:
        return self.num_phones

    @property
    def end(self) -> int:
        return self.num_phones

    def sequence_logprob(self, seq: Sequence[int]) -> float:
        hist, total = self.start, 0.0
        for p in seq:
            total += self.logprob[hist, p]
            hist = p
        return total + self.logprob[hist, self.end]

    def continuation(self, hist: int) -> np.ndarray:
        """Log-probabilities of the next phone given that the sequence continues."""
        row = self.logprob[hist, : self.num_phones]
        return row - np.logaddexp.reduce(row)


# ---------------------------------------------------------------------------
# Graph construction


def _check_phone(phone: int, inv: PhoneInventory) -> None:
    if not 0 <= phone < inv.num_phones:
        raise UnknownPhone(f"phone {phone} not in inventory of {inv.num_phones}")


def build_hmm(phone: int, inv: PhoneInventory) -> Graph:
    """Left-to-right HMM of one phone: entry arc, then self-loop/forward per state."""
    _check_phone(phone, inv)
    b = _GraphBuilder()
    entry = b.state()
    states = [b.state() for _ in range(inv.states_per_phone)]
    b.arc(entry, states[0], inv.state_id(phone, 0), 0.0, phone)
    for j, s in enumerate(states):
        b.arc(s, s, inv.state_id(phone, j), LOG_HALF)
        if j + 1 < len(states):
            b.arc(s, states[j + 1], inv.state_id(phone, j + 1), LOG_HALF)
    b.finals[states[-1]] = LOG_HALF
    return b.build(entry)


def build_numerator_graph(transcript: Sequence[int], inv: PhoneInventory, lm: PhoneLm | None = None) -> Graph:
    """Chain of phone HMMs for one transcript, weighted by the phone-LM prior."""
    if len(transcript) == 0:
        raise EmptyTranscript("numerator graph needs at least one phone")
    for p in transcript:
        _check_phone(p, inv)
    b = _GraphBuilder()
    prev = b.state()
    hist = lm.start if lm is not None else None
    leave = 0.0  # weight of the transition out of the previous state
    for p in transcript:
        lm_w = lm.logprob[hist, p] if lm is not None else 0.0
        for j in range(inv.states_per_phone):
            s = b.state()
            w = leave + (lm_w if j == 0 else 0.0)
            b.arc(prev, s, inv.state_id(p, j), w, p if j == 0 else -1)
            b.arc(s, s, inv.state_id(p, j), LOG_HALF)
            prev, leave = s, LOG_HALF
        hist = p
    b.finals[prev] = LOG_HALF + (lm.logprob[hist, lm.end] if lm is not None else 0.0)
    return b.build(0)


def build_denominator_graph(lm: PhoneLm, inv: PhoneInventory) -> Graph:
    """All phone sequences under the bigram LM; every emitting state is final.

    Phone-to-phone weights use the LM conditioned on the sequence continuing,
    so the graph is stochastic per frame and every frame count carries total
    probability one.
    """
    P = inv.num_phones
    b = _GraphBuilder()
    start = b.state()
    first, last = [], []
    for p in range(P):
        states = [b.state() for _ in range(inv.states_per_phone)]
        first.append(states[0])
        last.append(states[-1])
        for j, s in enumerate(states):
            b.arc(s, s, inv.state_id(p, j), LOG_HALF)
            if j + 1 < len(states):
                b.arc(s, states[j + 1], inv.state_id(p, j + 1), LOG_HALF)
            b.finals[s] = 0.0
    enter = lm.continuation(lm.start)
    for p in range(P):
        b.arc(start, first[p], inv.state_id(p, 0), enter[p], p)
    for q in range(P):
        cont = lm.continuation(q)
        for p in range(P):
            b.arc(last[q], first[p], inv.state_id(p, 0), LOG_HALF + cont[p], p)
    return b.build(start)


# ---------------------------------------------------------------------------
# Text format


def serialize_graph(g: Graph) -> str:
    lines = [f"start {g.start}"]
    for s, d, lab, w, ph in g.arcs():
        line = f"{s} {d} {lab} {w!r}"
        lines.append(line if ph < 0 else f"{line} {ph}")
    for s in range(g.num_states):
        if np.isfinite(g.final_logw[s]):
            lines.append(f"{s} {float(g.final_logw[s])!r}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> Graph:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][0] != "start" or len(lines[0]) != 2:
        raise ValueError("graph text must begin with 'start <id>'")
    start = int(lines[0][1])
    arcs, finals = [], {}
    for cols in lines[1:]:
        if len(cols) == 2:
            finals[int(cols[0])] = float(cols[1])
        elif len(cols) in (4, 5):
            ph = int(cols[4]) if len(cols) == 5 else -1
            arcs.append((int(cols[0]), int(cols[1]), int(cols[2]), float(cols[3]), ph))
        else:
            raise ValueError(f"bad graph line: {' '.join(cols)}")
    ids = [start] + list(finals) + [a[0] for a in arcs] + [a[1] for a in arcs]
    n = max(ids) + 1
    final = np.full(n, NEG_INF)
    for s, w in finals.items():
        final[s] = w
    cols = list(zip(*arcs)) if arcs else [[]] * 5
    return Graph(n, start, *cols[:4], final, cols[4])


# ---------------------------------------------------------------------------
# Forward-backward and Viterbi


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def _arc_scores(g: Graph, logp: np.ndarray) -> np.ndarray:
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2:
        raise ShapeMismatch("log-likelihoods must be T x K")
    if g.num_arcs and g.label.max() >= logp.shape[1]:
        raise ShapeMismatch(f"graph label {g.label.max()} outside {logp.shape[1]} columns")
    return g.logw[None, :] + logp[:, g.label]


def _dense_steps(g: Graph, scores: np.ndarray) -> np.ndarray:
    """``[T, S, S]`` log transition scores, parallel arcs log-summed."""
    T = scores.shape[0]
    S = g.num_states
    dense = np.full((T, S * S), NEG_INF)
    flat = g.src * S + g.dst
    order = np.argsort(flat, kind="stable")
    flat_sorted = flat[order]
    uniq, first = np.unique(flat_sorted, return_index=True)
    if len(uniq) == len(flat):
        dense[:, flat] = scores
    else:
        dense[:, uniq] = np.logaddexp.reduceat(scores[:, order], first, axis=1)
    return dense.reshape(T, S, S)


def forward_backward(g: Graph, logp: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``(logZ, gamma)``; ``gamma[t, k]`` is the posterior of label k at frame t."""
    logp = np.asarray(logp, dtype=np.float64)
    T, K = logp.shape if logp.ndim == 2 else (0, 0)
    if T == 0:
        raise NoPath("no frames")
    scores = _arc_scores(g, logp)
    steps = _dense_steps(g, scores)
    S = g.num_states
    alpha = np.full((T + 1, S), NEG_INF)
    alpha[0, g.start] = 0.0
    for t in range(T):
        alpha[t + 1] = _lse(alpha[t][:, None] + steps[t], axis=0)
    log_z = float(_lse(alpha[T] + g.final_logw, axis=0))
    if not np.isfinite(log_z):
        raise NoPath("graph admits no path over the given frames")
    beta = np.full((T + 1, S), NEG_INF)
    beta[T] = g.final_logw
    for t in range(T - 1, -1, -1):
        beta[t] = _lse(steps[t] + beta[t + 1][None, :], axis=1)
    post = alpha[:-1][:, g.src] + scores + beta[1:][:, g.dst] - log_z
    occ = np.exp(post)
    onehot = np.zeros((g.num_arcs, K))
    onehot[np.arange(g.num_arcs), g.label] = 1.0
    return log_z, occ @ onehot


def viterbi_decode(g: Graph, logp: np.ndarray, inv: PhoneInventory | None = None):
    """Best path: ``(best_logp, label sequence, phone sequence)``."""
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2 or logp.shape[0] == 0:
        raise NoPath("no frames")
    T = logp.shape[0]
    S = g.num_states
    scores = _arc_scores(g, logp)
    # best arc per (src, dst) pair and frame
    best = np.full((T, S, S), NEG_INF)
    which = np.full((T, S, S), -1, dtype=np.int64)
    for a in range(g.num_arcs):
        s, d = g.src[a], g.dst[a]
        better = scores[:, a] > best[:, s, d]
        best[better, s, d] = scores[better, a]
        which[better, s, d] = a
    delta = np.full(S, NEG_INF)
    delta[g.start] = 0.0
    back = np.zeros((T, S), dtype=np.int64)
    for t in range(T):
        cand = delta[:, None] + best[t]
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(S)]
    end_scores = delta + g.final_logw
    state = int(np.argmax(end_scores))
    best_logp = float(end_scores[state])
    if not np.isfinite(best_logp):
        raise NoPath("graph admits no path over the given frames")
    arcs = []
    for t in range(T - 1, -1, -1):
        prev = int(back[t, state])
        arcs.append(int(which[t, prev, state]))
        state = prev
    arcs.reverse()
    labels = g.label[arcs].tolist()
    phones = [int(p) for p in g.phone[arcs] if p >= 0]
    if not phones and inv is not None:
        phones = _collapse([inv.phone_of_state(k) for k in labels])
    return best_logp, labels, phones


def _collapse(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return out


# ---------------------------------------------------------------------------
# Objective


def lfmmi_objective(logits: Value, num: Graph, den: Graph) -> Value:
    """``log p(x|num) - log p(x|den)`` with logits as log-likelihoods.

    The returned 0-d value backpropagates ``gamma_num - gamma_den`` into the
    logits.
    """
    z = logits.data
    log_num, gamma_num = forward_backward(num, z)
    log_den, gamma_den = forward_backward(den, z)
    diff = gamma_num - gamma_den
    return nx.custom_op(np.asarray(log_num - log_den), (logits,), lambda g: (float(g) * diff,))
