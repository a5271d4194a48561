"""Feature frontend: STFT/iSTFT, log-Mel, splicing, IPD, normalisation.

Analysis frames start at ``t * shift`` with no signal padding, so the phase
reference of each frame is its first sample.  Frames are zero-padded on
the right up to ``dft_size``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .core import SAMPLE_RATE, ActivityMatrix, FrameGrid, MultichannelAudio, PosteriorMatrix, SSNDError

MEL_FLOOR = 1e-10


class DspError(SSNDError, ValueError):
    stage = "dsp"


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 25.0
    shift_ms: float = 10.0
    dft_size: int = 512
    sample_rate: int = SAMPLE_RATE
    window_kind: str = "sqrt-hann"

    def __post_init__(self):
        if self.shift_ms <= 0 or self.window_ms < self.shift_ms:
            raise DspError("need 0 < shift_ms <= window_ms")
        if self.win_length > self.dft_size:
            raise DspError(f"window of {self.win_length} samples exceeds dft_size {self.dft_size}")

    @classmethod
    def diarization(cls) -> "StftConfig":
        return cls(25.0, 10.0)

    @classmethod
    def separation(cls, shift_ms: float = 10.0) -> "StftConfig":
        return cls(32.0, shift_ms)

    @property
    def win_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.shift_ms * self.sample_rate / 1000))

    @property
    def n_bins(self) -> int:
        return self.dft_size // 2 + 1

    def window(self) -> np.ndarray:
        if self.window_kind == "sqrt-hann":
            return np.sqrt(get_window("hann", self.win_length, fftbins=True))
        if self.window_kind == "hann":
            return get_window("hann", self.win_length, fftbins=True)
        if self.window_kind == "rect":
            return np.ones(self.win_length)
        raise DspError(f"unknown window kind {self.window_kind!r}")

    def grid(self, n_frames: int) -> FrameGrid:
        return FrameGrid(self.shift_ms, self.window_ms, n_frames)


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # T x F complex
    config: StftConfig = field(default_factory=StftConfig)
    channel: int = 0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # T x D real
    kind: str
    grid: FrameGrid | None = None

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def stft(signal, cfg: StftConfig = StftConfig(), channel: int = 0) -> Spectrogram:
    x = np.asarray(signal)
    if x.ndim != 1:
        raise DspError("stft expects a single channel")
    win, hop = cfg.win_length, cfg.hop_length
    if x.shape[0] < win:
        raise DspError(f"signal of {x.shape[0]} samples is shorter than one window ({win})")
    n_frames = 1 + (x.shape[0] - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * cfg.window()
    return Spectrogram(np.fft.rfft(frames, n=cfg.dft_size, axis=1), cfg, channel)


def window_sum_square(n_frames: int, cfg: StftConfig) -> np.ndarray:
    win, hop = cfg.win_length, cfg.hop_length
    w2 = cfg.window() ** 2
    out = np.zeros((n_frames - 1) * hop + win)
    for t in range(n_frames):
        out[t * hop : t * hop + win] += w2
    return out


def istft(spec: Spectrogram) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft`.

    Output has ``(T-1)*hop + win`` samples; samples where the summed
    squared window vanishes are returned as zero.
    """
    cfg = spec.config
    win, hop = cfg.win_length, cfg.hop_length
    T = spec.values.shape[0]
    if T == 0:
        return np.zeros(0)
    w = cfg.window()
    frames = np.fft.irfft(spec.values, n=cfg.dft_size, axis=1)[:, :win] * w
    out = np.zeros((T - 1) * hop + win, dtype=frames.dtype)
    for t in range(T):
        out[t * hop : t * hop + win] += frames[t]
    norm = window_sum_square(T, cfg)
    nz = norm > 1e-12
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out


# --- log-Mel ------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 23, dft_size: int = 512, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``n_mels x (dft_size//2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(dft_size // 2 + 1) * sample_rate / dft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def logmel(spec: Spectrogram, n_mels: int = 23) -> FeatureMatrix:
    cfg = spec.config
    fb = mel_filterbank(n_mels, cfg.dft_size, cfg.sample_rate)
    power = np.abs(spec.values) ** 2
    return FeatureMatrix(np.log(power @ fb.T + MEL_FLOOR), f"logmel{n_mels}", cfg.grid(spec.n_frames))


def splice(f: FeatureMatrix, left: int = 7, right: int = 7) -> FeatureMatrix:
    """Stack each frame with its neighbours, repeating the boundary frames."""
    T = f.values.shape[0]
    offsets = np.arange(-left, right + 1)
    idx = np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)
    out = f.values[idx].reshape(T, -1)
    return FeatureMatrix(out, f"spliced{out.shape[1]}", f.grid)


def ipd(specs: Sequence[Spectrogram], ref: int = 0) -> FeatureMatrix:
    """Cosine/sine inter-channel phase differences against ``ref``.

    Layout per frame: for each non-reference channel in index order, the
    ``F`` cosines followed by the ``F`` sines of ``angle(X_ref) - angle(X_m)``.
    """
    if len(specs) < 2:
        raise DspError("IPD needs at least two channels")
    shape = specs[0].values.shape
    if any(s.values.shape != shape for s in specs):
        raise DspError("all spectrograms must share one shape")
    if not 0 <= ref < len(specs):
        raise DspError("reference channel out of range")
    ref_phase = np.angle(specs[ref].values)
    blocks = []
    for m, s in enumerate(specs):
        if m == ref:
            continue
        d = ref_phase - np.angle(s.values)
        blocks += [np.cos(d), np.sin(d)]
    return FeatureMatrix(np.concatenate(blocks, axis=1), "ipd", specs[0].config.grid(shape[0]))


def multichannel_stft(audio: MultichannelAudio, cfg: StftConfig = StftConfig()) -> list[Spectrogram]:
    return [stft(audio.samples[m], cfg, m) for m in range(audio.n_channels)]


def fuse(*features: FeatureMatrix) -> FeatureMatrix:
    T = min(f.n_frames for f in features)
    return FeatureMatrix(np.concatenate([f.values[:T] for f in features], axis=1), "fused", features[0].grid)


def normalize(f: FeatureMatrix):
    """Standardise every column; constant columns become zero.

    Returns ``(features, mean, std)``.
    """
    x = np.asarray(f.values, dtype=float)
    if x.shape[0] < 2:
        raise DspError("normalisation needs at least two frames")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centred = x - mean
    # rounding leaves a tiny nonzero std on constant float columns
    varying = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(varying, std, 1.0)
    out = np.where(varying, centred / safe, 0.0)
    return replace(f, values=out), mean, std


def subsample(f, factor: int = 5):
    """Keep frames ``0, factor, 2*factor, ...`` and widen the grid shift."""
    if factor < 1:
        raise DspError("subsampling factor must be >= 1")
    if not isinstance(f, (FeatureMatrix, PosteriorMatrix, ActivityMatrix)):
        raise DspError(f"cannot subsample {type(f).__name__}")
    if factor == 1:
        return f
    values = f.values[::factor]
    if isinstance(f, FeatureMatrix):
        grid = f.grid.with_shift(factor) if f.grid is not None else None
        return FeatureMatrix(values, f.kind, grid)
    if isinstance(f, PosteriorMatrix):
        return PosteriorMatrix(f.grid.with_shift(factor), values, f.speakers)
    return ActivityMatrix(f.grid.with_shift(factor), values, f.speakers, f.azimuths)


def featurize(audio: MultichannelAudio, cfg: StftConfig = StftConfig(), kind: str = "fused") -> FeatureMatrix:
    """Compute the diarisation input features for ``audio``.

    ``kind`` is one of ``logmel``, ``spliced``, ``ipd`` or ``fused``
    (spliced log-Mel followed by raw IPD).
    """
    specs = multichannel_stft(audio, cfg)
    ref = specs[audio.ref_channel]
    if kind == "logmel":
        return logmel(ref)
    if kind == "spliced":
        return splice(logmel(ref))
    if kind == "ipd":
        return ipd(specs, audio.ref_channel)
    if kind == "fused":
        if audio.n_channels < 2:
            return splice(logmel(ref))
        return fuse(splice(logmel(ref)), ipd(specs, audio.ref_channel))
    raise DspError(f"unknown feature kind {kind!r}")


# --- binary matrix files -------------------------------------------------------
#
# Little-endian layout:
#   8s   magic  b"SSNDMAT1"
#   H    dtype code (1 float32, 2 float64, 3 complex64, 4 complex128, 5 uint8)
#   I I  rows, cols
#   d d  grid shift_ms, window_ms (0 when absent)
#   H    byte length of the kind string, then UTF-8 kind
#   I    byte length of the labels block, then UTF-8 labels joined by "\n"
#   data rows*cols elements, row-major

MAGIC = b"SSNDMAT1"
_HEAD = struct.Struct("<8sHIIdd")
_DTYPES = {1: "<f4", 2: "<f8", 3: "<c8", 4: "<c16", 5: "u1"}
_CODES = {(np.dtype(v).kind, np.dtype(v).itemsize): k for k, v in _DTYPES.items()}


@dataclass(frozen=True)
class MatrixFile:
    values: np.ndarray
    kind: str = ""
    grid: FrameGrid | None = None
    labels: tuple = ()


def write_matrix(path, values, kind: str = "", grid: FrameGrid | None = None, labels: Sequence[str] = ()) -> None:
    a = np.asarray(values)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DspError("matrix files hold 2-D arrays")
    key = (a.dtype.kind, a.dtype.itemsize)
    if key not in _CODES:
        a = a.astype(np.complex128 if np.iscomplexobj(a) else np.float64)
        key = (a.dtype.kind, a.dtype.itemsize)
    code = _CODES[key]
    kind_b = kind.encode("utf-8")
    labels_b = "\n".join(labels).encode("utf-8")
    shift = grid.shift_ms if grid else 0.0
    window = grid.window_ms if grid else 0.0
    with open(path, "wb") as f:
        f.write(_HEAD.pack(MAGIC, code, a.shape[0], a.shape[1], shift, window))
        f.write(struct.pack("<H", len(kind_b)) + kind_b)
        f.write(struct.pack("<I", len(labels_b)) + labels_b)
        f.write(np.ascontiguousarray(a, dtype=np.dtype(_DTYPES[code])).tobytes())


def read_matrix(path) -> MatrixFile:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEAD.size or blob[:8] != MAGIC:
        raise DspError(f"{path}: not a matrix file")
    magic, code, rows, cols, shift, window = _HEAD.unpack_from(blob, 0)
    if code not in _DTYPES:
        raise DspError(f"{path}: unknown dtype code {code}")
    pos = _HEAD.size
    (n,) = struct.unpack_from("<H", blob, pos)
    kind = blob[pos + 2 : pos + 2 + n].decode("utf-8")
    pos += 2 + n
    (n,) = struct.unpack_from("<I", blob, pos)
    labels_s = blob[pos + 4 : pos + 4 + n].decode("utf-8")
    pos += 4 + n
    dt = np.dtype(_DTYPES[code])
    expected = rows * cols * dt.itemsize
    if len(blob) - pos != expected:
        raise DspError(f"{path}: payload is {len(blob) - pos} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype=dt, count=rows * cols, offset=pos).reshape(rows, cols).copy()
    grid = FrameGrid(shift, window, rows) if shift > 0 else None
    labels = tuple(labels_s.split("\n")) if labels_s else ()
    return MatrixFile(values, kind, grid, labels)
