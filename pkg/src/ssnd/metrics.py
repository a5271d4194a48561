"""Diarisation error rate, word error rate and cpWER."""

from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import FrameGrid, SpeakerInterval, SSNDError, intervals_to_activity
from .criteria import brute_force_assignment, hungarian


class MetricsError(SSNDError, ValueError):
    stage = "metrics"


@dataclass(frozen=True)
class DerReport:
    der: float
    missed: float
    false_alarm: float
    confusion: float
    collar_s: float = 0.0
    # absolute seconds, kept so reports can be pooled across sessions
    total_s: float = 0.0
    missed_s: float = 0.0
    false_alarm_s: float = 0.0
    confusion_s: float = 0.0
    mapping: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_seconds(cls, total, mi, fa, cf, collar_s=0.0, mapping=None) -> "DerReport":
        if total > 0:
            rates = (mi / total, fa / total, cf / total)
        else:
            rates = (0.0, math.inf if fa > 0 else 0.0, 0.0)
        return cls(sum(rates), *rates, collar_s, total, mi, fa, cf, dict(mapping or {}))


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    n_ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.n_ref_words == 0:
            return 0.0 if self.errors == 0 else math.inf
        return self.errors / self.n_ref_words

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.n_ref_words + other.n_ref_words,
        )


# --- DER ----------------------------------------------------------------------


def _collar_mask(ref: Sequence[SpeakerInterval], grid: FrameGrid, collar_s: float) -> np.ndarray:
    scored = np.ones(grid.n_frames, dtype=bool)
    if collar_s <= 0:
        return scored
    for iv in ref:
        for b in (iv.start, iv.end):
            scored[grid.frames_in(max(0.0, b - collar_s), b + collar_s)] = False
    return scored


def der(
    ref: Sequence[SpeakerInterval],
    hyp: Sequence[SpeakerInterval],
    collar_s: float = 0.0,
    resolution_ms: float = 10,
    method: str = "hungarian",
) -> DerReport:
    """Frame-based DER with one global optimal speaker mapping.

    The reference/hypothesis mapping maximises jointly active time.
    ``method="brute"`` enumerates every injective mapping instead.
    """
    ref, hyp = list(ref), list(hyp)
    end = max([iv.end for iv in ref + hyp], default=0.0)
    grid = FrameGrid.for_duration(end, resolution_ms)
    R = intervals_to_activity(ref, grid).values.astype(np.int64)
    H = intervals_to_activity(hyp, grid).values.astype(np.int64)
    ref_spk = sorted({iv.speaker for iv in ref})
    hyp_spk = sorted({iv.speaker for iv in hyp})
    scored = _collar_mask(ref, grid, collar_s)
    R, H = R[scored], H[scored]

    overlap = R.T @ H  # jointly active frames per (ref, hyp) pair
    mapping = _best_mapping(overlap, method)
    n_ref = R.sum(axis=1)
    n_hyp = H.sum(axis=1)
    n_correct = np.zeros_like(n_ref)
    for i, j in mapping.items():
        n_correct += R[:, i] * H[:, j]
    mi = np.maximum(0, n_ref - n_hyp).sum()
    fa = np.maximum(0, n_hyp - n_ref).sum()
    cf = (np.minimum(n_ref, n_hyp) - n_correct).sum()
    step = resolution_ms / 1000.0
    names = {ref_spk[i]: hyp_spk[j] for i, j in mapping.items()}
    return DerReport.from_seconds(n_ref.sum() * step, mi * step, fa * step, cf * step, collar_s, names)


def _best_mapping(overlap: np.ndarray, method: str) -> dict[int, int]:
    n_ref, n_hyp = overlap.shape
    if n_ref == 0 or n_hyp == 0:
        return {}
    size = max(n_ref, n_hyp)
    cost = np.zeros((size, size))
    cost[:n_ref, :n_hyp] = -overlap
    if method == "hungarian":
        assignment, _ = hungarian(cost)
    elif method == "brute":
        assignment, _ = brute_force_assignment(cost)
    else:
        raise MetricsError(f"unknown mapping method {method!r}")
    return {i: j for i, j in enumerate(assignment) if i < n_ref and j < n_hyp}


# --- WER ----------------------------------------------------------------------

_PUNCT = re.compile(r"[^\w\s']", re.UNICODE)


def normalize_text(text: str) -> str:
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def _words(x, normalize: bool) -> list[str]:
    if isinstance(x, str):
        return (normalize_text(x) if normalize else x).split()
    words = list(x)
    if normalize:
        words = normalize_text(" ".join(words)).split()
    return words


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def wer(ref, hyp, normalize: bool = True) -> WerReport:
    """Levenshtein WER; ties in the backtrace prefer substitutions."""
    r, h = _words(ref, normalize), _words(hyp, normalize)
    n, m = len(r), len(h)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j - 1] + (r[i - 1] != h[j - 1]), d[i - 1, j] + 1, d[i, j - 1] + 1)
    S = D = I = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (r[i - 1] != h[j - 1]):
            S += r[i - 1] != h[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1
    return WerReport(int(S), D, I, n)


def _joined(transcripts, normalize: bool) -> list[str]:
    if isinstance(transcripts, str):
        return _words(transcripts, normalize)
    out: list[str] = []
    for utt in transcripts:
        out += _words(utt, normalize)
    return out


def cpwer(
    ref: Mapping[str, Sequence[str] | str],
    hyp: Mapping[str, Sequence[str] | str],
    method: str = "hungarian",
    normalize: bool = True,
) -> tuple[WerReport, dict]:
    """Concatenated minimum-permutation WER.

    Each value is one speaker's utterances in time order (or an already
    joined string).  The smaller side is padded with empty speakers.
    Returns the pooled report and the ``ref speaker -> hyp speaker``
    mapping (``None`` for a padded partner).
    """
    ref_ids, hyp_ids = sorted(ref), sorted(hyp)
    ref_words = [_joined(ref[s], normalize) for s in ref_ids]
    hyp_words = [_joined(hyp[s], normalize) for s in hyp_ids]
    n_words = sum(len(w) for w in ref_words)
    if n_words == 0:
        raise MetricsError("reference transcripts contain no words")
    size = max(len(ref_ids), len(hyp_ids))
    ref_words += [[]] * (size - len(ref_ids))
    hyp_words += [[]] * (size - len(hyp_ids))
    cost = np.array([[edit_distance(r, h) for h in hyp_words] for r in ref_words], dtype=float)
    if method == "hungarian":
        assignment, _ = hungarian(cost)
    elif method == "brute":
        if size > 8:
            raise MetricsError("brute-force cpWER is limited to 8 speakers")
        assignment, _ = brute_force_assignment(cost)
    else:
        raise MetricsError(f"unknown cpWER method {method!r}")
    total = WerReport(0, 0, 0, 0)
    mapping = {}
    for i, j in enumerate(assignment):
        total = total + wer(ref_words[i], hyp_words[j], normalize=False)
        if i < len(ref_ids):
            mapping[ref_ids[i]] = hyp_ids[j] if j < len(hyp_ids) else None
    return total, mapping


# --- grouped reporting ------------------------------------------------------

CONDITIONS = ("0S", "0L", "OV10", "OV20", "OV30", "OV40")


@dataclass(frozen=True)
class SessionScore:
    session: str
    condition: str
    der: DerReport | None = None
    cpwer: WerReport | None = None


def speaker_counted_overlap_report(scores: Iterable[SessionScore]) -> list[dict]:
    """Pool per-session scores by condition, plus an ``all`` row.

    DER is pooled by summing error and reference times; cpWER by summing
    error and word counts.  Conditions without sessions are omitted.
    """
    scores = list(scores)
    groups: dict[str, list[SessionScore]] = {}
    for s in scores:
        groups.setdefault(s.condition, []).append(s)
    order = [c for c in CONDITIONS if c in groups] + sorted(c for c in groups if c not in CONDITIONS)
    rows = [_pool(c, groups[c]) for c in order]
    if scores:
        rows.append(_pool("all", scores))
    return rows


def _pool(name: str, items: list[SessionScore]) -> dict:
    row: dict = {"condition": name, "sessions": len(items)}
    ders = [s.der for s in items if s.der is not None]
    if ders:
        pooled = DerReport.from_seconds(
            sum(d.total_s for d in ders),
            sum(d.missed_s for d in ders),
            sum(d.false_alarm_s for d in ders),
            sum(d.confusion_s for d in ders),
        )
        row.update(der=pooled.der, mi=pooled.missed, fa=pooled.false_alarm, cf=pooled.confusion)
    wers = [s.cpwer for s in items if s.cpwer is not None]
    if wers:
        pooled_w = sum(wers[1:], wers[0])
        row.update(cpwer=pooled_w.wer, S=pooled_w.substitutions, D=pooled_w.deletions, I=pooled_w.insertions)
    return row


def write_der_csv(rows: Iterable[tuple[str, str, DerReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["session", "condition", "der", "mi", "fa", "cf"])
        for session, condition, r in rows:
            w.writerow([session, condition, f"{r.der:.6f}", f"{r.missed:.6f}", f"{r.false_alarm:.6f}", f"{r.confusion:.6f}"])


def write_cpwer_csv(rows: Iterable[tuple[str, str, WerReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["session", "condition", "cpwer", "S", "D", "I"])
        for session, condition, r in rows:
            w.writerow([session, condition, f"{r.wer:.6f}", r.substitutions, r.deletions, r.insertions])


def report_dict(r: DerReport | WerReport) -> dict:
    if isinstance(r, WerReport):
        return {**asdict(r), "wer": r.wer}
    return asdict(r)
