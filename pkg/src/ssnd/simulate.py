"""Seeded meeting-style multichannel session generator.

Utterances are laid out one after another.  Between neighbours the
generator either inserts a silence or lets the next utterance start
before the previous one ends; overlap amounts are sized so that the
session-level overlap ratio hits a sampled target while at most two
talkers are ever active and every utterance keeps a solo stretch.
Spatialisation is an anechoic far-field delay applied as a phase ramp;
measured room impulse responses can be imported and convolved instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft
from scipy.signal import fftconvolve, lfilter

from .core import (
    SAMPLE_RATE,
    FrameGrid,
    MultichannelAudio,
    SpeakerInterval,
    SSNDError,
    TranscriptRecord,
    intervals_to_activity,
    read_manifest,
    read_rttm,
    read_wav,
    to_ms,
    write_manifest,
    write_rttm,
    write_wav,
)

SPEED_OF_SOUND = 343.0


class SimulationError(SSNDError, ValueError):
    stage = "simulate"


class PoolExhausted(SimulationError):
    pass


def circular_array(radius: float = 0.0425, n_ring: int = 6, center: bool = True) -> np.ndarray:
    """Ring of ``n_ring`` mics, optionally with a centre mic first (index 0)."""
    angles = 2 * np.pi * np.arange(n_ring) / n_ring
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n_ring)], axis=1)
    return np.vstack([np.zeros((1, 3)), ring]) if center else ring


@dataclass(frozen=True)
class SessionSpec:
    n_speakers: int = 8
    utterances_per_speaker: tuple = (2, 2)
    utterance_s: tuple = (1.0, 3.0)
    overlap_range: tuple = (0.0, 0.45)
    silence_range_s: tuple = (0.5, 3.0)
    silence_prob: float = 0.26
    level_range_db: tuple = (-3.5, 3.5)
    snr_range_db: tuple = (10.0, 30.0)
    min_azimuth_sep_deg: float = 5.0
    noise_kind: str = "diffuse"
    n_plane_waves: int = 36
    min_solo_fraction: float = 0.1
    time_quantum_ms: int = 10
    tail_s: float = 0.5
    sample_rate: int = SAMPLE_RATE
    max_tries: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("utterances_per_speaker", "utterance_s", "overlap_range", "silence_range_s",
                     "level_range_db", "snr_range_db"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SimulationError(f"{name} is empty: {lo} > {hi}")
            object.__setattr__(self, name, (lo, hi))
        if not 0.0 <= self.silence_prob <= 1.0:
            raise SimulationError("silence_prob must lie in [0, 1]")
        if not 0.0 <= self.min_solo_fraction < 1.0:
            raise SimulationError("min_solo_fraction must lie in [0, 1)")
        if self.overlap_range[0] < 0:
            raise SimulationError("overlap ratios are non-negative")

    @classmethod
    def diarization(cls, **kw) -> "SessionSpec":
        return cls(**kw)

    @classmethod
    def separation(cls, **kw) -> "SessionSpec":
        base = dict(
            utterances_per_speaker=(1, 2),
            utterance_s=(1.5, 9.99),
            overlap_range=(0.4, 0.5),
            silence_range_s=(0.5, 1.0),
            silence_prob=0.05,
        )
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SessionSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SimulationError(f"unknown session spec keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class Utterance:
    samples: np.ndarray
    words: tuple = ()


@dataclass(frozen=True)
class PlacedUtterance:
    speaker: str
    start: float
    end: float
    text: str
    gain_db: float


@dataclass(frozen=True)
class Session:
    mixture: MultichannelAudio
    sources: dict  # speaker -> reference-mic direct-path signal, full length
    intervals: list
    azimuths: dict
    gains_db: dict
    snr_db: float
    utterances: list
    spec: SessionSpec
    seed: int
    session_id: str = "session"

    @property
    def speakers(self) -> list[str]:
        return sorted(self.sources)

    @property
    def duration(self) -> float:
        return self.mixture.duration

    def transcripts(self) -> list[TranscriptRecord]:
        return [TranscriptRecord(self.session_id, u.speaker, u.start, u.end, u.text) for u in self.utterances]

    def overlap_ratio(self) -> float:
        return overlap_ratio(self.intervals)


# --- synthetic utterance pool ---------------------------------------------------

_VOCAB = (
    "the of and to in is was he for it with as his on be at by had are but from or have an they "
    "which one you were her all she there would their we him been has when who will more no if out "
    "so said what up its about into than them can only other new some could time these two may then "
    "do first any my now such like our over man me even most made after also did many before must "
    "through back years where much your way well down should because each just those people how too "
    "little state good very make world still own see men work long get here between both life being "
    "under never day same another know while last might us great old year off come since against go"
).split()


def synthetic_pool(
    n_speakers: int,
    n_utterances: int,
    duration_s: tuple = (1.0, 3.0),
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    quantum_ms: int = 10,
) -> dict[str, list[Utterance]]:
    """Colored-noise bursts with a syllabic envelope standing in for speech.

    Every sample of every utterance is nonzero, so an utterance's support is
    exactly its interval.
    """
    rng = np.random.default_rng(seed)
    pool = {}
    for c in range(n_speakers):
        # one resonance per speaker gives each voice its own colour
        fc = rng.uniform(300.0, 2500.0)
        rad = rng.uniform(0.85, 0.97)
        w = 2 * np.pi * fc / sample_rate
        a = [1.0, -2 * rad * np.cos(w), rad * rad]
        utts = []
        for _ in range(n_utterances):
            dur_ms = quantum_ms * int(round(rng.uniform(*duration_s) * 1000 / quantum_ms))
            n = dur_ms * sample_rate // 1000
            x = lfilter([1.0], a, rng.standard_normal(n))
            t = np.arange(n) / sample_rate
            env = 0.6 + 0.4 * np.abs(np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t + rng.uniform(0, np.pi)))
            x = x * env
            x /= np.sqrt(np.mean(x**2))
            x[x == 0.0] = 1e-12
            n_words = max(1, int(round(dur_ms / 1000 * rng.uniform(2.0, 3.0))))
            words = tuple(_VOCAB[i] for i in rng.integers(0, len(_VOCAB), n_words))
            utts.append(Utterance(x, words))
        pool[f"spk{c}"] = utts
    return pool


# --- geometry and propagation -------------------------------------------------------


def sample_azimuths(n: int, min_sep_deg: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` azimuths in [0, 360) with pairwise circular separation >= ``min_sep_deg``."""
    if n * min_sep_deg > 360.0:
        raise SimulationError(f"cannot place {n} speakers {min_sep_deg} degrees apart")
    if n == 0:
        return np.zeros(0)
    slack = 360.0 - n * min_sep_deg
    u = np.sort(rng.uniform(0.0, slack, n))
    points = (u + min_sep_deg * np.arange(n) + rng.uniform(0.0, 360.0)) % 360.0
    return rng.permutation(points)


def circular_separation(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def far_field_delays(azimuth_deg: float, geometry, ref: int = 0, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Arrival delay of a far-field plane wave at each mic relative to ``ref`` (s).

    A mic at radius ``r`` and angle ``phi`` around the reference hears the
    wave ``(r/c) * cos(azimuth - phi)`` seconds earlier than the reference.
    """
    g = np.asarray(geometry, dtype=float)
    theta = np.deg2rad(azimuth_deg)
    toward = np.array([np.cos(theta), np.sin(theta), 0.0])
    return -((g - g[ref]) @ toward) / c


def spatialize(source, azimuth_deg: float, geometry, ref: int = 0, sample_rate: int = SAMPLE_RATE) -> MultichannelAudio:
    x = np.asarray(source, dtype=float)
    g = np.asarray(geometry, dtype=float)
    delays = far_field_delays(azimuth_deg, g, ref) * sample_rate
    out = np.empty((g.shape[0], x.shape[0]))
    pad = int(np.ceil(np.abs(delays).max())) + 16 if delays.size else 0
    n_fft = next_fast_len(x.shape[0] + 2 * pad)
    spectrum = None
    freqs = None
    for m, d in enumerate(delays):
        if d == 0.0:
            out[m] = x
            continue
        if spectrum is None:
            padded = np.zeros(n_fft)
            padded[pad : pad + x.shape[0]] = x
            spectrum = rfft(padded)
            freqs = np.arange(spectrum.shape[0]) / n_fft
        out[m] = irfft(spectrum * np.exp(-2j * np.pi * freqs * d), n_fft)[pad : pad + x.shape[0]]
    return MultichannelAudio(out, sample_rate, g, ref)


def import_rirs(paths: Sequence) -> list[np.ndarray]:
    """Load multichannel RIRs from WAV files, each ``M x K``."""
    return [read_wav(p).samples.copy() for p in paths]


def convolve(source, rir, geometry=None, sample_rate: int = SAMPLE_RATE) -> MultichannelAudio:
    """Full linear convolution of a mono source with each RIR channel."""
    x = np.asarray(source, dtype=float)
    h = np.atleast_2d(np.asarray(rir, dtype=float))
    if x.ndim != 1:
        raise SimulationError("convolve expects a mono source")
    if geometry is not None and len(geometry) != h.shape[0]:
        raise SimulationError(f"RIR has {h.shape[0]} channels, geometry has {len(geometry)}")
    if h.shape[1] == 0 or x.size == 0:
        raise SimulationError("empty source or RIR")
    out = np.stack([fftconvolve(x, h[m]) for m in range(h.shape[0])])
    return MultichannelAudio(out, sample_rate, geometry)


def add_noise(
    mixture: MultichannelAudio,
    snr_db: float,
    kind: str = "diffuse",
    seed: int = 0,
    n_plane_waves: int = 36,
) -> MultichannelAudio:
    """Add noise at ``snr_db`` relative to the mean power of ``mixture``.

    ``diffuse`` noise is a sum of independent white plane waves from random
    azimuths (needs geometry); ``uncorrelated`` is independent white noise
    per channel.  ``snr_db = inf`` returns the input unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return mixture
    if not math.isfinite(snr_db):
        raise SimulationError("SNR must be finite or +inf")
    x = mixture.samples
    p_signal = float(np.mean(x**2))
    if p_signal <= 0:
        raise SimulationError("cannot set an SNR against a silent signal")
    rng = np.random.default_rng(seed)
    M, N = x.shape
    if kind == "uncorrelated":
        noise = rng.standard_normal((M, N))
    elif kind == "diffuse":
        if mixture.geometry is None:
            raise SimulationError("diffuse noise needs array geometry")
        noise = _diffuse_noise(mixture.geometry, mixture.ref_channel, N, n_plane_waves, rng, mixture.sample_rate)
    else:
        raise SimulationError(f"unknown noise kind {kind!r}")
    p_noise = float(np.mean(noise**2))
    noise *= np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return MultichannelAudio(x + noise, mixture.sample_rate, mixture.geometry, mixture.ref_channel)


def _diffuse_noise(geometry, ref, n_samples, n_waves, rng, sample_rate) -> np.ndarray:
    g = np.asarray(geometry, dtype=float)
    n_fft = next_fast_len(n_samples + 64)
    n_bins = n_fft // 2 + 1
    block = int(math.isqrt(n_bins)) + 1
    n_blocks = -(-n_bins // block)
    k_fine = np.arange(block)
    k_coarse = np.arange(n_blocks) * block
    acc = np.zeros((g.shape[0], n_blocks, block), dtype=np.complex64)
    tmp = np.empty_like(acc)
    for az in rng.uniform(0.0, 360.0, n_waves):
        # white spectrum drawn directly; scale matches rfft of unit-variance noise
        wave = rng.standard_normal((n_blocks * block, 2), dtype=np.float32).view(np.complex64)[:, 0]
        wave = wave.reshape(n_blocks, block)
        step = -2j * np.pi * far_field_delays(az, g, ref) * sample_rate / n_fft
        # exp(step * (a*block + b)) = coarse[a] * fine[b]
        coarse = np.exp(np.outer(step, k_coarse)).astype(np.complex64)
        fine = np.exp(np.outer(step, k_fine)).astype(np.complex64)
        np.multiply(coarse[:, :, None], fine[:, None, :], out=tmp)
        tmp *= wave[None]
        acc += tmp
    acc = acc.reshape(g.shape[0], -1)[:, :n_bins]
    return irfft(acc, n_fft, axis=1)[:, :n_samples]


# --- session layout ---------------------------------------------------------------


def overlap_ratio(intervals: Sequence[SpeakerInterval]) -> float:
    """Time with >= 2 active speakers over time with >= 1 active speaker."""
    events = []
    for iv in intervals:
        events.append((iv.start_ms, 1))
        events.append((iv.end_ms, -1))
    events.sort()
    active = 0
    prev = None
    speech = overlapped = 0
    for t, delta in events:
        if prev is not None and t > prev:
            if active >= 1:
                speech += t - prev
            if active >= 2:
                overlapped += t - prev
        active += delta
        prev = t
    return overlapped / speech if speech else 0.0


def _max_overlaps(budgets: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Largest total overlap on a chain where utterance ``i`` can give away at
    most ``budgets[i]`` ms to its two neighbours (greedy is optimal on a path)."""
    n = budgets.shape[0]
    o = np.zeros(n, dtype=np.int64)  # o[i]: overlap between utterance i-1 and i
    for i in range(1, n):
        if eligible[i]:
            o[i] = min(budgets[i - 1] - o[i - 1], budgets[i])
    return o


def _layout(lengths_ms, speakers, spec: SessionSpec, target: float, rng) -> tuple[np.ndarray, np.ndarray] | None:
    """Onsets (ms) for utterances in order, or None when ``target`` is out of reach."""
    n = len(lengths_ms)
    q = spec.time_quantum_ms
    lengths = np.asarray(lengths_ms, dtype=np.int64)
    silence = rng.random(n) < spec.silence_prob
    gaps = np.zeros(n, dtype=np.int64)
    lo, hi = spec.silence_range_s
    for i in range(1, n):
        if silence[i]:
            gaps[i] = q * int(round(rng.uniform(lo, hi) * 1000 / q))
    eligible = ~silence & (np.asarray(speakers) != np.roll(np.asarray(speakers), 1))
    eligible[0] = False
    budgets = (lengths * (1.0 - spec.min_solo_fraction)).astype(np.int64) // q * q
    o_max = _max_overlaps(budgets, eligible)
    want = target * lengths.sum() / (1.0 + target)
    if want > o_max.sum():
        return None
    alpha = want / o_max.sum() if o_max.sum() else 0.0
    overlaps = (np.floor(alpha * o_max / q) * q).astype(np.int64)
    onsets = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        prev_end = onsets[i - 1] + lengths[i - 1]
        onsets[i] = prev_end - overlaps[i] if overlaps[i] else prev_end + gaps[i]
    return onsets, overlaps


@dataclass(frozen=True)
class SessionLayout:
    """Speaker choice, geometry draws and utterance placement of a session."""

    speakers: tuple
    azimuths: dict
    gains_db: dict
    items: tuple  # (speaker, Utterance) in placement order
    onsets_ms: tuple
    lengths_ms: tuple
    intervals: tuple
    target_ratio: float

    @property
    def end_ms(self) -> int:
        return max(o + n for o, n in zip(self.onsets_ms, self.lengths_ms))


def layout_session(spec: SessionSpec, utterance_pool: Mapping[str, Sequence[Utterance]], rng) -> SessionLayout:
    """Draw speakers, azimuths, levels and utterance onsets (no audio rendered).

    Retries with fresh utterance draws until the realised overlap ratio lies
    in ``spec.overlap_range``.
    """
    sr, q = spec.sample_rate, spec.time_quantum_ms
    names = sorted(utterance_pool)
    if len(names) < spec.n_speakers:
        raise PoolExhausted(f"pool has {len(names)} speakers, need {spec.n_speakers}")
    chosen = sorted(rng.choice(names, spec.n_speakers, replace=False).tolist())
    azimuths = dict(zip(chosen, sample_azimuths(spec.n_speakers, spec.min_azimuth_sep_deg, rng).tolist()))
    gains_db = {s: float(rng.uniform(*spec.level_range_db)) for s in chosen}

    for _ in range(spec.max_tries):
        items = []
        for s in chosen:
            k = int(rng.integers(spec.utterances_per_speaker[0], spec.utterances_per_speaker[1] + 1))
            if len(utterance_pool[s]) < k:
                raise PoolExhausted(f"speaker {s!r} has {len(utterance_pool[s])} utterances, need {k}")
            for j in sorted(rng.choice(len(utterance_pool[s]), k, replace=False).tolist()):
                u = utterance_pool[s][j]
                if (u.samples.shape[0] * 1000) % (sr * q) != 0:
                    raise SimulationError(f"utterance lengths must be multiples of {q} ms")
                items.append((s, u))
        items = [items[i] for i in rng.permutation(len(items))]
        lengths = [u.samples.shape[0] * 1000 // sr for _, u in items]
        target = float(rng.uniform(*spec.overlap_range))
        placed = _layout(lengths, [s for s, _ in items], spec, target, rng)
        if placed is None:
            continue
        onsets, _ = placed
        intervals = [SpeakerInterval(s, on / 1000, (on + ln) / 1000) for (s, _), on, ln in zip(items, onsets, lengths)]
        lo, hi = spec.overlap_range
        if lo - 1e-12 <= overlap_ratio(intervals) <= hi + 1e-12:
            intervals.sort(key=lambda iv: (iv.start_ms, iv.speaker))
            return SessionLayout(
                tuple(chosen), azimuths, gains_db, tuple(items), tuple(int(o) for o in onsets),
                tuple(lengths), tuple(intervals), target,
            )
    raise SimulationError(f"no layout reached the overlap range {spec.overlap_range} in {spec.max_tries} tries")


def _default_pool(spec: SessionSpec, rng):
    return synthetic_pool(
        spec.n_speakers, spec.utterances_per_speaker[1], spec.utterance_s,
        seed=int(rng.integers(2**32)), sample_rate=spec.sample_rate, quantum_ms=spec.time_quantum_ms,
    )


def generate_session(
    spec: SessionSpec = SessionSpec(),
    utterance_pool: Mapping[str, Sequence[Utterance]] | None = None,
    seed: int | None = None,
    geometry=None,
    session_id: str | None = None,
) -> Session:
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    sr = spec.sample_rate
    if utterance_pool is None:
        utterance_pool = _default_pool(spec, rng)
    geometry = circular_array() if geometry is None else np.asarray(geometry, dtype=float)
    lay = layout_session(spec, utterance_pool, rng)

    n_samples = (lay.end_ms + to_ms(spec.tail_s)) * sr // 1000
    clean = np.zeros((geometry.shape[0], n_samples))
    sources = {s: np.zeros(n_samples) for s in lay.speakers}
    utterances = []
    for (s, u), on in zip(lay.items, lay.onsets_ms):
        a = on * sr // 1000
        scaled = u.samples * 10.0 ** (lay.gains_db[s] / 20.0)
        sources[s][a : a + scaled.shape[0]] += scaled
        clean[:, a : a + scaled.shape[0]] += spatialize(scaled, lay.azimuths[s], geometry, 0, sr).samples
        utterances.append(PlacedUtterance(s, on / 1000, (on + scaled.shape[0] * 1000 // sr) / 1000, " ".join(u.words), lay.gains_db[s]))
    mixture = MultichannelAudio(clean, sr, geometry, 0)
    snr = float(rng.uniform(*spec.snr_range_db))
    mixture = add_noise(mixture, snr, spec.noise_kind, int(rng.integers(2**32)), spec.n_plane_waves)
    return Session(
        mixture, sources, list(lay.intervals), lay.azimuths, lay.gains_db, snr, utterances,
        replace(spec, seed=seed), seed, session_id or f"session{seed}",
    )


def sample_layout(spec: SessionSpec = SessionSpec(), seed: int | None = None) -> SessionLayout:
    """The layout :func:`generate_session` would use for ``seed`` with the
    default synthetic pool, without rendering audio."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    return layout_session(spec, _default_pool(spec, rng), rng)


# --- separation training segments ---------------------------------------------------


@dataclass(frozen=True)
class TrainingSegment:
    start: float
    mixture: MultichannelAudio
    targets: dict
    speaker_count: np.ndarray  # active speakers per frame

    @property
    def n_speakers(self) -> int:
        return len(self.targets)


def make_training_segments(session: Session, segment_s: float = 5.0, shift_ms: float = 10) -> list[TrainingSegment]:
    """Cut the session into back-to-back ``segment_s`` chunks (remainder dropped)."""
    seg_ms = to_ms(segment_s)
    total_ms = session.mixture.n_samples * 1000 // session.mixture.sample_rate
    if total_ms < seg_ms:
        raise SimulationError("session is shorter than one segment")
    sr = session.mixture.sample_rate
    grid = FrameGrid.for_duration(total_ms / 1000, shift_ms)
    act = intervals_to_activity(session.intervals, grid, session.speakers)
    per_seg = int(seg_ms // shift_ms)
    out = []
    for k in range(total_ms // seg_ms):
        a, b = k * seg_ms * sr // 1000, (k + 1) * seg_ms * sr // 1000
        frames = act.values[k * per_seg : (k + 1) * per_seg]
        active = [s for c, s in enumerate(act.speakers) if frames[:, c].any()]
        out.append(TrainingSegment(
            k * seg_ms / 1000,
            session.mixture.slice(a, b),
            {s: session.sources[s][a:b] for s in active},
            frames.sum(axis=1),
        ))
    return out


def single_speaker_fraction(segments: Sequence[TrainingSegment]) -> float:
    if not segments:
        return 0.0
    return sum(1 for s in segments if s.n_speakers == 1) / len(segments)


# --- session files ----------------------------------------------------------------


def write_session(session: Session, outdir) -> Path:
    """Mixture WAV, per-speaker target WAVs, RTTM, transcripts and a JSON manifest."""
    out = Path(outdir)
    (out / "sources").mkdir(parents=True, exist_ok=True)
    write_wav(session.mixture, out / "mixture.wav")
    for s in session.speakers:
        write_wav(session.sources[s], out / "sources" / f"{s}.wav", session.mixture.sample_rate)
    write_rttm(session.intervals, out / "session.rttm", session.session_id)
    write_manifest(session.transcripts(), out / "transcripts.tsv")
    manifest = {
        "session_id": session.session_id,
        "seed": session.seed,
        "sample_rate": session.mixture.sample_rate,
        "n_samples": session.mixture.n_samples,
        "geometry": np.asarray(session.mixture.geometry).tolist(),
        "azimuths": session.azimuths,
        "gains_db": session.gains_db,
        "snr_db": session.snr_db,
        "overlap_ratio": session.overlap_ratio(),
        "spec": session.spec.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def read_session(indir) -> Session:
    d = Path(indir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    mix = read_wav(d / "mixture.wav")
    mixture = MultichannelAudio(mix.samples, mix.sample_rate, manifest.get("geometry"), 0)
    sources = {p.stem: read_wav(p).samples[0].copy() for p in sorted((d / "sources").glob("*.wav"))}
    records = read_manifest(d / "transcripts.tsv")
    utterances = [PlacedUtterance(r.speaker, r.start, r.end, r.text, manifest["gains_db"].get(r.speaker, 0.0)) for r in records]
    return Session(
        mixture, sources, read_rttm(d / "session.rttm"), manifest["azimuths"], manifest["gains_db"],
        manifest["snr_db"], utterances, SessionSpec.from_dict(manifest["spec"]), manifest["seed"],
        manifest["session_id"],
    )
