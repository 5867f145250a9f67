"""Phone error rate via Levenshtein alignment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingUtterance


@dataclass
class EditCounts:
    sub: int = 0
    dele: int = 0
    ins: int = 0
    ref_len: int = 0

    @property
    def errors(self) -> int:
        return self.sub + self.dele + self.ins

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.sub + other.sub, self.dele + other.dele, self.ins + other.ins, self.ref_len + other.ref_len)


def align_counts(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Minimum-edit alignment; ties prefer substitution, then deletion, then insertion."""
    n, m = len(ref), len(hyp)
    # cost, then (sub, del, ins) carried along the best path
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    i, j = n, m
    s = d = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(s), d, ins, n)


@dataclass
class ScoreReport:
    wer: float
    sub: int
    dele: int
    ins: int
    ref_tokens: int
    utterances: int
    frame_accuracy: float | None = None
    per_subset: dict[str, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"WER\t{self.wer:.2f}",
            f"substitutions\t{self.sub}",
            f"deletions\t{self.dele}",
            f"insertions\t{self.ins}",
            f"reference_tokens\t{self.ref_tokens}",
            f"utterances\t{self.utterances}",
        ]
        if self.frame_accuracy is not None:
            out.append(f"frame_accuracy\t{self.frame_accuracy:.2f}")
        for name in sorted(self.per_subset):
            out.append(f"WER[{name}]\t{self.per_subset[name]:.2f}")
        return out


def wer_percent(counts: EditCounts) -> float:
    return 100.0 * counts.errors / counts.ref_len if counts.ref_len else 0.0


def score(
    refs: Mapping[str, Sequence],
    hyps: Mapping[str, Sequence],
    ref_frames: Mapping[str, Sequence[int]] | None = None,
    hyp_frames: Mapping[str, Sequence[int]] | None = None,
    subsets: Mapping[str, str] | None = None,
) -> ScoreReport:
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise MissingUtterance(f"no hypothesis for {missing[:5]}")
    total = EditCounts()
    by_subset: dict[str, EditCounts] = {}
    for uid in sorted(refs):
        c = align_counts(list(refs[uid]), list(hyps[uid]))
        total = total + c
        if subsets is not None:
            key = subsets[uid]
            by_subset[key] = by_subset.get(key, EditCounts()) + c
    frame_acc = None
    if ref_frames is not None and hyp_frames is not None:
        hit = n = 0
        for uid in sorted(refs):
            r = np.asarray(ref_frames[uid])
            h = np.asarray(hyp_frames.get(uid, []))
            n += len(r)
            if len(h) == len(r):
                hit += int(np.sum(r == h))
        frame_acc = 100.0 * hit / n if n else 0.0
    return ScoreReport(
        wer_percent(total), total.sub, total.dele, total.ins, total.ref_len, len(refs), frame_acc,
        {k: wer_percent(v) for k, v in by_subset.items()},
    )
