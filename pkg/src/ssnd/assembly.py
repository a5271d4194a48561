"""Embedding-sequence and target-stream assembly for two-output separation.

Speaker-active intervals are spread over two streams so that no stream
ever carries two intervals at once.  Each stream then gets an embedding
sequence (the speaker's embedding on its intervals, zeros elsewhere) and a
target waveform (the speaker's reference signal on its intervals).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import SAMPLE_RATE, ActivityMatrix, FrameGrid, SpeakerInterval, SSNDError, intervals_to_activity, to_ms


class AssemblyError(SSNDError, ValueError):
    stage = "assembly"


class ThreeWayOverlap(AssemblyError):
    """More than two intervals are active at ``time``."""

    def __init__(self, time: float, intervals: Sequence[SpeakerInterval] = ()):
        self.time = time
        self.intervals = tuple(intervals)
        who = ", ".join(repr(iv) for iv in self.intervals)
        super().__init__(f"three or more speakers active at t={time:.3f}s ({who})")


class NoSoloFrames(AssemblyError):
    def __init__(self, speaker):
        self.speaker = speaker
        super().__init__(f"speaker {speaker!r} is never active alone")


class MissingEmbedding(AssemblyError, KeyError):
    pass


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray
    speaker: str
    n_frames: int


@dataclass(frozen=True)
class StreamAssignment:
    """``entries[k] = (interval index, stream)`` in processing order."""

    entries: tuple
    intervals: tuple = ()

    def stream_of(self) -> dict[int, int]:
        return dict(self.entries)

    def on_stream(self, s: int) -> list[SpeakerInterval]:
        return [self.intervals[i] for i, st in self.entries if st == s]


@dataclass(frozen=True)
class EmbeddingSequence:
    values: np.ndarray  # T x E
    grid: FrameGrid


@dataclass(frozen=True)
class SegmentWindow:
    start: float
    end: float
    emit_start: float

    @property
    def emit(self) -> tuple[float, float]:
        return self.emit_start, self.end


@dataclass(frozen=True)
class SegmentPlan:
    size_s: float
    shift_s: float
    windows: tuple


# --- embeddings ---------------------------------------------------------------


def single_talker_frames(Y: ActivityMatrix, c: int | str) -> np.ndarray:
    """Indices of frames where speaker ``c`` is the only active speaker."""
    col = Y.speakers.index(c) if isinstance(c, str) else int(c)
    v = Y.values
    solo = (v[:, col] == 1) & (v.sum(axis=1) == 1)
    return np.flatnonzero(solo)


def extract_embedding(frame_embeddings, Y: ActivityMatrix, c: int | str, fallback: bool = False) -> SpeakerEmbedding:
    """Average frame embeddings over the speaker's solo frames.

    With ``fallback=True`` a speaker without solo frames is averaged over
    every frame where it is active instead of raising :class:`NoSoloFrames`.
    """
    e = np.asarray(frame_embeddings, dtype=float)
    col = Y.speakers.index(c) if isinstance(c, str) else int(c)
    name = Y.speakers[col]
    if e.shape[0] != Y.n_frames:
        raise AssemblyError(f"{e.shape[0]} embedding frames for {Y.n_frames} label frames")
    frames = single_talker_frames(Y, col)
    if frames.size == 0:
        if not fallback:
            raise NoSoloFrames(name)
        frames = np.flatnonzero(Y.values[:, col])
        if frames.size == 0:
            raise NoSoloFrames(name)
    return SpeakerEmbedding(e[frames].mean(axis=0), name, int(frames.size))


def extract_embeddings(frame_embeddings, Y: ActivityMatrix, fallback: bool = False) -> dict[str, SpeakerEmbedding]:
    out = {}
    for c, spk in enumerate(Y.speakers):
        if Y.values[:, c].any():
            out[spk] = extract_embedding(frame_embeddings, Y, c, fallback)
    return out


# --- stream assignment ----------------------------------------------------------


def processing_order(intervals: Sequence[SpeakerInterval]) -> list[int]:
    """Onset order; simultaneous onsets go longest first, then by speaker."""
    return sorted(
        range(len(intervals)),
        key=lambda k: (intervals[k].start_ms, -(intervals[k].end_ms - intervals[k].start_ms), intervals[k].speaker),
    )


def assign_streams(intervals: Sequence[SpeakerInterval]) -> StreamAssignment:
    """Spread speaker-active intervals over two streams.

    The first interval goes to stream 0.  At each later onset, if only one
    stream is idle the interval takes it; if both are idle it joins the
    stream of the previously ended interval when the speaker is the same
    and the other stream otherwise.  Intervals are half-open, so an
    interval ending exactly at an onset counts as ended.
    """
    intervals = list(intervals)
    last: list[int | None] = [None, None]  # most recent interval on each stream
    entries = []
    for k in processing_order(intervals):
        iv = intervals[k]
        busy = [
            last[s] is not None and intervals[last[s]].end_ms > iv.start_ms
            for s in (0, 1)
        ]
        if all(busy):
            raise ThreeWayOverlap(iv.start, [intervals[last[0]], intervals[last[1]], iv])
        if busy[0] != busy[1]:
            stream = 0 if not busy[0] else 1
        else:
            prev = _previously_ended(intervals, last)
            if prev is None:
                stream = 0
            else:
                prev_stream = 0 if last[0] == prev else 1
                stream = prev_stream if intervals[prev].speaker == iv.speaker else 1 - prev_stream
        last[stream] = k
        entries.append((k, stream))
    return StreamAssignment(tuple(entries), tuple(intervals))


def _previously_ended(intervals, last) -> int | None:
    # latest end; ties go to the later onset, then to stream 0
    best, best_key = None, None
    for s in (0, 1):
        k = last[s]
        if k is None:
            continue
        key = (intervals[k].end_ms, intervals[k].start_ms, -s)
        if best_key is None or key > best_key:
            best, best_key = k, key
    return best


# --- sequences and targets --------------------------------------------------


def _vector(emb) -> np.ndarray:
    return np.asarray(emb.vector if isinstance(emb, SpeakerEmbedding) else emb, dtype=float)


def build_embedding_sequences(
    assignment: StreamAssignment,
    embeddings: Mapping[str, SpeakerEmbedding | np.ndarray],
    grid: FrameGrid,
    dim: int | None = None,
) -> tuple[EmbeddingSequence, EmbeddingSequence]:
    intervals = assignment.intervals
    if dim is None:
        dims = {_vector(e).shape[0] for e in embeddings.values()}
        if len(dims) > 1:
            raise AssemblyError(f"embeddings disagree on dimension: {sorted(dims)}")
        dim = dims.pop() if dims else 0
    seqs = np.zeros((2, grid.n_frames, dim))
    for k, s in assignment.entries:
        iv = intervals[k]
        if iv.speaker not in embeddings:
            raise MissingEmbedding(iv.speaker)
        seqs[s, grid.frames_in(iv.start, iv.end)] = _vector(embeddings[iv.speaker])
    return EmbeddingSequence(seqs[0], grid), EmbeddingSequence(seqs[1], grid)


def build_target_streams(
    assignment: StreamAssignment,
    sources: Mapping[str, np.ndarray],
    n_samples: int,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Two reference waveforms, shape ``2 x n_samples``."""
    intervals = assignment.intervals
    streams = np.zeros((2, n_samples))
    per_ms = sample_rate / 1000.0
    for k, s in assignment.entries:
        iv = intervals[k]
        if iv.speaker not in sources:
            raise MissingEmbedding(f"no source for speaker {iv.speaker!r}")
        a = min(int(round(iv.start_ms * per_ms)), n_samples)
        b = min(int(round(iv.end_ms * per_ms)), n_samples)
        src = np.asarray(sources[iv.speaker])
        streams[s, a:b] = src[a:b]
    return streams


def check_streams(assignment: StreamAssignment) -> None:
    """Raise if two intervals on one stream overlap."""
    for s in (0, 1):
        ivs = sorted(assignment.on_stream(s), key=lambda iv: iv.start_ms)
        for a, b in zip(ivs, ivs[1:]):
            if b.start_ms < a.end_ms:
                raise AssemblyError(f"stream {s} overlaps: {a} and {b}")


# --- segmentation -----------------------------------------------------------


def plan_segments(session_len_s: float, size_s: float, shift_s: float) -> SegmentPlan:
    """Windows ``[k*shift, k*shift + size)``; the first emits everything, later
    ones only their trailing ``shift`` seconds, so emits tile the session."""
    total, size, shift = to_ms(session_len_s), to_ms(size_s), to_ms(shift_s)
    if not 0 < shift <= size:
        raise AssemblyError("need 0 < shift <= size")
    windows = []
    k = 0
    while total > 0:
        start = k * shift
        end = min(start + size, total)
        emit = start if k == 0 else start + size - shift
        windows.append(SegmentWindow(start / 1000.0, end / 1000.0, emit / 1000.0))
        if start + size >= total:
            break
        k += 1
    return SegmentPlan(size_s, shift_s, tuple(windows))


def normalize_mixture(segment, targets=None):
    """Scale ``segment`` to unit sample variance; apply the same gain to targets.

    Returns ``(scaled segment, scaled targets, scale)``.
    """
    x = np.asarray(segment, dtype=float)
    var = x.var()
    if var <= 0:
        raise AssemblyError("cannot normalise an all-zero segment")
    scale = 1.0 / np.sqrt(var)
    scaled_targets = None if targets is None else np.asarray(targets, dtype=float) * scale
    return x * scale, scaled_targets, float(scale)


# --- separation loss ----------------------------------------------------------


def _values(spec):
    return np.asarray(getattr(spec, "values", spec))


def separation_loss(estimates: Sequence, references: Sequence) -> float:
    """Mean over the two streams of the L1 distances between real parts,
    imaginary parts and magnitudes of the STFTs."""
    if len(estimates) != len(references):
        raise AssemblyError("need as many estimates as references")
    total = 0.0
    for est, ref in zip(estimates, references):
        e, r = _values(est), _values(ref)
        if e.shape != r.shape:
            raise AssemblyError(f"shape mismatch {e.shape} vs {r.shape}")
        total += (
            np.abs(e.real - r.real).sum()
            + np.abs(e.imag - r.imag).sum()
            + np.abs(np.abs(e) - np.abs(r)).sum()
        )
    return float(total / len(estimates))


# --- composition ----------------------------------------------------------------


@dataclass(frozen=True)
class Assembly:
    assignment: StreamAssignment
    sequences: tuple
    targets: np.ndarray | None = None
    embeddings: dict = field(default_factory=dict)


def assemble(
    intervals: Sequence[SpeakerInterval],
    embeddings: Mapping[str, SpeakerEmbedding | np.ndarray],
    grid: FrameGrid,
    sources: Mapping[str, np.ndarray] | None = None,
    n_samples: int | None = None,
    sample_rate: int = SAMPLE_RATE,
    dim: int | None = None,
) -> Assembly:
    assignment = assign_streams(intervals)
    sequences = build_embedding_sequences(assignment, embeddings, grid, dim)
    targets = None
    if sources is not None:
        if n_samples is None:
            n_samples = int(round(grid.duration_s * sample_rate))
        targets = build_target_streams(assignment, sources, n_samples, sample_rate)
    return Assembly(assignment, sequences, targets, dict(embeddings))


def write_assignment(assignment: StreamAssignment, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("interval_id\tspeaker\tstart\tend\tstream\n")
        for k, s in sorted(assignment.entries):
            iv = assignment.intervals[k]
            f.write(f"{k}\t{iv.speaker}\t{iv.start:.3f}\t{iv.end:.3f}\t{s}\n")


def read_assignment(path) -> StreamAssignment:
    intervals, entries = [], []
    with open(path, encoding="utf-8") as f:
        next(f, None)
        for line in f:
            if not line.strip():
                continue
            k, spk, start, end, s = line.rstrip("\n").split("\t")
            intervals.append((int(k), SpeakerInterval(spk, float(start), float(end)), int(s)))
    intervals.sort()
    return StreamAssignment(tuple((k, s) for k, _, s in intervals), tuple(iv for _, iv, _ in intervals))
