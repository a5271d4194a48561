"""Shared domain types, frame-grid arithmetic and file I/O.

Times are carried as seconds but every interval boundary is snapped to an
integer number of milliseconds on construction, so interval arithmetic
never drifts.  Frame ``t`` of a grid owns the hop cell
``[t*shift, (t+1)*shift)``; activity is decided by the centre of that cell.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


class SSNDError(Exception):
    """Base class for errors raised by this package."""

    stage = "core"


class RttmParseError(SSNDError, ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnknownSpeakerError(SSNDError, KeyError):
    pass


class AudioFormatError(SSNDError, ValueError):
    pass


def to_ms(seconds: float) -> int:
    return int(round(seconds * 1000.0))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FrameGrid:
    shift_ms: float
    window_ms: float | None = None
    n_frames: int = 0

    def __post_init__(self):
        if self.shift_ms <= 0:
            raise ValueError("shift_ms must be positive")
        if self.window_ms is None:
            object.__setattr__(self, "window_ms", self.shift_ms)
        if self.window_ms < self.shift_ms:
            raise ValueError("window_ms must be >= shift_ms")
        if self.n_frames < 0:
            raise ValueError("n_frames must be >= 0")

    @classmethod
    def for_duration(cls, seconds: float, shift_ms: float, window_ms: float | None = None) -> "FrameGrid":
        n = int(math.ceil(to_ms(seconds) / shift_ms - 1e-9)) if seconds > 0 else 0
        return cls(shift_ms, window_ms, n)

    @property
    def shift_s(self) -> float:
        return self.shift_ms / 1000.0

    @property
    def duration_s(self) -> float:
        return self.n_frames * self.shift_s

    def frame_start(self, t):
        return np.asarray(t) * self.shift_ms / 1000.0

    def frame_center(self, t):
        return (np.asarray(t) + 0.5) * self.shift_ms / 1000.0

    def frame_of(self, seconds: float) -> int:
        """Index of the frame whose hop cell contains ``seconds``."""
        return int(math.floor(to_ms(seconds) / self.shift_ms + 1e-9))

    def frames_in(self, start: float, end: float) -> slice:
        """Frames whose centres fall inside ``[start, end)``."""
        # centre (t + 0.5) * shift in [s, e)  <=>  t in [s/shift - 0.5, e/shift - 0.5)
        lo = math.ceil(to_ms(start) / self.shift_ms - 0.5 - 1e-9)
        hi = math.ceil(to_ms(end) / self.shift_ms - 0.5 - 1e-9)
        lo = min(max(lo, 0), self.n_frames)
        hi = min(max(hi, lo), self.n_frames)
        return slice(lo, hi)

    def with_shift(self, factor: int) -> "FrameGrid":
        n = -(-self.n_frames // factor)
        return FrameGrid(self.shift_ms * factor, max(self.window_ms, self.shift_ms * factor), n)

    def resized(self, n_frames: int) -> "FrameGrid":
        return FrameGrid(self.shift_ms, self.window_ms, n_frames)


@dataclass(frozen=True, order=True)
class SpeakerInterval:
    start: float
    end: float
    speaker: str

    def __init__(self, speaker, start: float, end: float):
        s, e = to_ms(start), to_ms(end)
        if s < 0 or s >= e:
            raise ValueError(f"invalid interval for {speaker!r}: [{start}, {end})")
        object.__setattr__(self, "speaker", str(speaker))
        object.__setattr__(self, "start", s / 1000.0)
        object.__setattr__(self, "end", e / 1000.0)

    def __repr__(self):
        return f"SpeakerInterval({self.speaker!r}, {self.start:.3f}, {self.end:.3f})"

    @property
    def start_ms(self) -> int:
        return to_ms(self.start)

    @property
    def end_ms(self) -> int:
        return to_ms(self.end)

    @property
    def duration(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0

    def overlaps(self, other: "SpeakerInterval") -> bool:
        return self.start_ms < other.end_ms and other.start_ms < self.end_ms


@dataclass(frozen=True)
class ActivityMatrix:
    grid: FrameGrid
    values: np.ndarray
    speakers: tuple
    azimuths: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("activity values must be T x C")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("activity values must be binary")
        object.__setattr__(self, "values", _frozen(v.astype(np.uint8)))
        object.__setattr__(self, "speakers", tuple(str(s) for s in self.speakers))
        if len(self.speakers) != v.shape[1]:
            raise ValueError("one speaker label per column required")
        if v.shape[0] != self.grid.n_frames:
            object.__setattr__(self, "grid", self.grid.resized(v.shape[0]))
        if self.azimuths is not None:
            az = tuple(float(a) for a in self.azimuths)
            if len(az) != v.shape[1]:
                raise ValueError("azimuths must have one entry per speaker")
            object.__setattr__(self, "azimuths", az)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PosteriorMatrix:
    grid: FrameGrid
    values: np.ndarray
    speakers: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("posterior values must be T x C")
        if v.size and (v.min() < 0.0 or v.max() > 1.0 or np.isnan(v).any()):
            raise ValueError("posteriors must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))
        speakers = tuple(str(s) for s in self.speakers) or tuple(f"spk{c}" for c in range(v.shape[1]))
        if len(speakers) != v.shape[1]:
            raise ValueError("one speaker label per column required")
        object.__setattr__(self, "speakers", speakers)
        if v.shape[0] != self.grid.n_frames:
            object.__setattr__(self, "grid", self.grid.resized(v.shape[0]))


@dataclass(frozen=True)
class MultichannelAudio:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    geometry: np.ndarray | None = None
    ref_channel: int = 0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ValueError("samples must be M x N")
        object.__setattr__(self, "samples", _frozen(x))
        if self.geometry is not None:
            g = np.asarray(self.geometry, dtype=float)
            if g.shape != (x.shape[0], 3):
                raise ValueError("geometry must hold one 3-D position per channel")
            object.__setattr__(self, "geometry", _frozen(g))
        if not 0 <= self.ref_channel < x.shape[0]:
            raise ValueError("reference channel out of range")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    @property
    def reference(self) -> np.ndarray:
        return self.samples[self.ref_channel]

    def slice(self, start: int, stop: int) -> "MultichannelAudio":
        return MultichannelAudio(self.samples[:, start:stop], self.sample_rate, self.geometry, self.ref_channel)


def speakers_of(intervals: Iterable[SpeakerInterval]) -> list[str]:
    """Speaker labels in order of first appearance (by onset)."""
    seen: dict[str, None] = {}
    for iv in sorted(intervals, key=lambda iv: (iv.start_ms, iv.end_ms, iv.speaker)):
        seen.setdefault(iv.speaker, None)
    return list(seen)


def intervals_to_activity(
    intervals: Sequence[SpeakerInterval],
    grid: FrameGrid,
    speakers: Sequence[str] | None = None,
    azimuths: Sequence[float] | None = None,
) -> ActivityMatrix:
    if speakers is None:
        speakers = sorted({iv.speaker for iv in intervals})
    index = {s: c for c, s in enumerate(speakers)}
    values = np.zeros((grid.n_frames, len(speakers)), dtype=np.uint8)
    for iv in intervals:
        if iv.speaker not in index:
            raise UnknownSpeakerError(iv.speaker)
        values[grid.frames_in(iv.start, iv.end), index[iv.speaker]] = 1
    return ActivityMatrix(grid, values, tuple(speakers), azimuths)


def _runs(column: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([0], column.astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def activity_to_intervals(act: ActivityMatrix) -> list[SpeakerInterval]:
    out = []
    for c, spk in enumerate(act.speakers):
        for a, b in _runs(act.values[:, c]):
            out.append(SpeakerInterval(spk, a * act.grid.shift_ms / 1000.0, b * act.grid.shift_ms / 1000.0))
    out.sort(key=lambda iv: (iv.start_ms, iv.end_ms, iv.speaker))
    return out


# --- RTTM -----------------------------------------------------------------


def parse_rttm(lines: Iterable[str]) -> list[SpeakerInterval]:
    out = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise RttmParseError(lineno, f"expected at least 8 fields, got {len(fields)}")
        try:
            onset = float(fields[3])
            dur = float(fields[4])
        except ValueError:
            raise RttmParseError(lineno, "onset/duration are not numbers") from None
        if onset < 0 or dur <= 0:
            raise RttmParseError(lineno, "negative onset or non-positive duration")
        s, d = to_ms(onset), to_ms(dur)
        out.append(SpeakerInterval(fields[7], s / 1000.0, (s + d) / 1000.0))
    return out


def read_rttm(path) -> list[SpeakerInterval]:
    with open(path, encoding="utf-8") as f:
        return parse_rttm(f)


def format_rttm(intervals: Iterable[SpeakerInterval], file_id: str = "session") -> str:
    lines = []
    for iv in sorted(intervals, key=lambda iv: (iv.start_ms, iv.speaker, iv.end_ms)):
        lines.append(
            f"SPEAKER {file_id} 1 {iv.start_ms / 1000:.3f} {(iv.end_ms - iv.start_ms) / 1000:.3f} "
            f"<NA> <NA> {iv.speaker} <NA> <NA>\n"
        )
    return "".join(lines)


def write_rttm(intervals: Iterable[SpeakerInterval], path, file_id: str = "session") -> None:
    Path(path).write_text(format_rttm(intervals, file_id), encoding="utf-8")


# --- transcript manifests ---------------------------------------------------


@dataclass(frozen=True)
class TranscriptRecord:
    session: str
    speaker: str
    start: float
    end: float
    text: str


def read_manifest(path) -> list[TranscriptRecord]:
    """Read a tab-separated ``session speaker start end text`` manifest."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t", 4)
            if len(parts) < 4:
                raise SSNDError(f"{path}:{lineno}: expected session, speaker, start, end, text")
            text = parts[4] if len(parts) == 5 else ""
            out.append(TranscriptRecord(parts[0], parts[1], float(parts[2]), float(parts[3]), text))
    return out


def write_manifest(records: Iterable[TranscriptRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(f"{r.session}\t{r.speaker}\t{r.start:.3f}\t{r.end:.3f}\t{r.text}\n")


def transcripts_by_speaker(records: Iterable[TranscriptRecord]) -> dict[str, list[str]]:
    """Group utterance texts per speaker, each list in time order."""
    grouped: dict[str, list[TranscriptRecord]] = {}
    for r in records:
        grouped.setdefault(r.speaker, []).append(r)
    return {s: [r.text for r in sorted(rs, key=lambda r: (r.start, r.end))] for s, rs in grouped.items()}


# --- WAV ----------------------------------------------------------------------


def read_wav(path) -> MultichannelAudio:
    if os.path.getsize(path) == 0:
        raise AudioFormatError(f"{path}: empty file")
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise AudioFormatError(f"{path}: no samples")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample type {data.dtype}")
    x = x[:, None] if x.ndim == 1 else x
    return MultichannelAudio(x.T, int(rate))


def write_wav(audio: MultichannelAudio | np.ndarray, path, sample_rate: int = SAMPLE_RATE, pcm16: bool = False) -> None:
    if isinstance(audio, MultichannelAudio):
        x, sample_rate = audio.samples, audio.sample_rate
    else:
        x = np.atleast_2d(np.asarray(audio, dtype=float))
    if x.shape[1] == 0:
        raise AudioFormatError("refusing to write zero-length audio")
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    data = data.T
    wavfile.write(path, int(sample_rate), data[:, 0] if data.shape[1] == 1 else data)


# --- config -------------------------------------------------------------------

CONFIG_ENV = "SSND_CONFIG"


def load_config(path=None) -> dict:
    """Load a JSON key-value tree; falls back to ``$SSND_CONFIG`` then ``{}``."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
