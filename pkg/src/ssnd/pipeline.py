"""Model interfaces, ground-truth oracle models and the end-to-end runner."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .assembly import (
    StreamAssignment,
    assign_streams,
    build_embedding_sequences,
    build_target_streams,
    extract_embeddings,
    plan_segments,
    separation_loss,
)
from .core import (
    FrameGrid,
    MultichannelAudio,
    PosteriorMatrix,
    SpeakerInterval,
    SSNDError,
    intervals_to_activity,
    read_wav,
    transcripts_by_speaker,
    write_wav,
)
from .diarpost import PostProcessConfig, decide
from .dsp import StftConfig, read_matrix, stft, write_matrix
from .metrics import DerReport, WerReport, cpwer, der
from .simulate import Session


class PipelineError(SSNDError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


class Diarizer(Protocol):
    def diarize(self, audio: MultichannelAudio, grid: FrameGrid) -> tuple[PosteriorMatrix, np.ndarray]:
        """Frame posteriors (T x C) and frame embeddings (T x E) on ``grid``."""


class Separator(Protocol):
    def separate(self, mixture: MultichannelAudio, seq0: np.ndarray, seq1: np.ndarray, *, start_s: float) -> np.ndarray:
        """Two reference-mic waveforms (2 x N) for a mixture segment of N samples."""


# --- oracle models ------------------------------------------------------------------


class OracleDiarizer:
    """Ground-truth activity as posteriors; frame embeddings are the sum of the
    one-hot vectors of the active speakers."""

    def __init__(self, session: Session, embed_dim: int | None = None):
        self.session = session
        self.speakers = session.speakers
        self.embed_dim = embed_dim or len(self.speakers)
        if self.embed_dim < len(self.speakers):
            raise PipelineError("diarize", "embedding dimension smaller than speaker count")

    def diarize(self, audio, grid):
        act = intervals_to_activity(self.session.intervals, grid, self.speakers)
        basis = np.eye(len(self.speakers), self.embed_dim)
        return PosteriorMatrix(grid, act.values.astype(float), act.speakers), act.values @ basis


class OracleSeparator:
    """Emits, per stream and frame, the true source of the speaker whose one-hot
    embedding sits on that frame (silence for a zero embedding)."""

    def __init__(self, session: Session, grid_shift_ms: float = 10):
        self.session = session
        self.speakers = session.speakers
        self.shift_ms = grid_shift_ms

    def separate(self, mixture, seq0, seq1, *, start_s=0.0):
        sr = mixture.sample_rate
        hop = int(round(self.shift_ms * sr / 1000))
        a0 = int(round(start_s * sr))
        n = mixture.n_samples
        out = np.zeros((2, n))
        for s, seq in enumerate((seq0, seq1)):
            seq = np.asarray(seq)
            idx = self._speaker_index(seq)
            for t in np.flatnonzero(idx >= 0):
                a, b = t * hop, min((t + 1) * hop, n)
                src = self.session.sources[self.speakers[idx[t]]]
                out[s, a:b] = src[a0 + a : a0 + b]
        return out

    @staticmethod
    def _speaker_index(seq: np.ndarray) -> np.ndarray:
        if seq.shape[1] == 0:
            return np.full(seq.shape[0], -1)
        active = np.any(seq != 0, axis=1)
        one_hot = (np.sum(seq == 1, axis=1) == 1) & (np.sum(seq != 0, axis=1) == 1)
        if np.any(active & ~one_hot):
            t = int(np.flatnonzero(active & ~one_hot)[0])
            raise PipelineError("separate", f"frame {t} carries a non-one-hot embedding")
        return np.where(active, np.argmax(seq, axis=1), -1)


class OracleRecognizer:
    """Exact-match stand-in for ASR.

    Words of a session utterance are spread evenly over its span.  A word is
    recognised when its midpoint falls in the requested span and the stream
    reproduces the utterance's source over the whole word.
    """

    def __init__(self, session: Session, rtol: float = 1e-6):
        self.session = session
        self.rtol = rtol
        self.sr = session.mixture.sample_rate

    def transcribe(self, stream: np.ndarray, start: float, end: float) -> list[str]:
        words = []
        for u in sorted(self.session.utterances, key=lambda u: (u.start, u.speaker)):
            if u.end <= start or u.start >= end:
                continue
            tokens = u.text.split()
            if not tokens:
                continue
            step = (u.end - u.start) / len(tokens)
            src = self.session.sources[u.speaker]
            for k, w in enumerate(tokens):
                ws, we = u.start + k * step, u.start + (k + 1) * step
                if not start <= (ws + we) / 2 < end:
                    continue
                a, b = int(round(ws * self.sr)), int(round(we * self.sr))
                ref = src[a:b]
                if np.max(np.abs(stream[a:b] - ref)) <= self.rtol * max(np.max(np.abs(ref)), 1e-12):
                    words.append(w)
        return words


# --- subprocess adapters ----------------------------------------------------------


def _run(cmd: Sequence[str], stage: str) -> None:
    proc = subprocess.run(list(cmd), capture_output=True, text=True)
    if proc.returncode != 0:
        raise PipelineError(stage, f"external command failed ({proc.returncode}): {proc.stderr.strip()}")


class SubprocessDiarizer:
    """Runs ``CMD mixture.wav OUTDIR SHIFT_MS``; the command must write
    ``OUTDIR/posteriors.mat`` (T x C, speaker labels) and
    ``OUTDIR/embeddings.mat`` (T x E) in the binary matrix format."""

    def __init__(self, command: str | Sequence[str]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)

    def diarize(self, audio, grid):
        with tempfile.TemporaryDirectory() as tmp:
            wav = Path(tmp) / "mixture.wav"
            write_wav(audio, wav)
            _run([*self.command, str(wav), tmp, f"{grid.shift_ms:g}"], "diarize")
            post = read_matrix(Path(tmp) / "posteriors.mat")
            emb = read_matrix(Path(tmp) / "embeddings.mat")
        if post.values.shape[0] != grid.n_frames or emb.values.shape[0] != grid.n_frames:
            raise PipelineError("diarize", f"model returned {post.values.shape[0]} frames, expected {grid.n_frames}")
        return PosteriorMatrix(grid, np.clip(post.values.astype(float), 0, 1), post.labels), emb.values.astype(float)


class SubprocessSeparator:
    """Runs ``CMD segment.wav seq0.mat seq1.mat out.wav``; ``out.wav`` must hold
    two channels with as many samples as the segment."""

    def __init__(self, command: str | Sequence[str]):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)

    def separate(self, mixture, seq0, seq1, *, start_s=0.0):
        with tempfile.TemporaryDirectory() as tmp:
            d = Path(tmp)
            write_wav(mixture, d / "segment.wav")
            write_matrix(d / "seq0.mat", np.asarray(seq0, dtype=np.float32), "embseq")
            write_matrix(d / "seq1.mat", np.asarray(seq1, dtype=np.float32), "embseq")
            _run([*self.command, str(d / "segment.wav"), str(d / "seq0.mat"), str(d / "seq1.mat"), str(d / "out.wav")], "separate")
            out = read_wav(d / "out.wav").samples
        if out.shape != (2, mixture.n_samples):
            raise PipelineError("separate", f"separator returned shape {out.shape}, expected (2, {mixture.n_samples})")
        return out


# --- configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    grid_shift_ms: float = 10
    postprocess: PostProcessConfig = PostProcessConfig()
    segment_size_s: float = 30.0
    segment_shift_s: float = 27.0
    stft: StftConfig = StftConfig.separation()
    embed_dim: int | None = None
    embedding_fallback: bool = False
    diarizer: str = "oracle"
    separator: str = "oracle"
    seed: int = 0

    def __post_init__(self):
        if self.segment_shift_s <= 0 or self.segment_shift_s > self.segment_size_s:
            raise PipelineError("config", "need 0 < segment_shift_s <= segment_size_s")
        if self.grid_shift_ms <= 0:
            raise PipelineError("config", "grid_shift_ms must be positive")

    @classmethod
    def oracle(cls, **kw) -> "PipelineConfig":
        """Oracle posteriors are exact, so smoothing is switched off."""
        kw.setdefault("postprocess", PostProcessConfig(0.5, 1))
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        base = base or cls()
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PipelineError("config", f"unknown keys: {sorted(unknown)}")
        try:
            if "postprocess" in d:
                d["postprocess"] = replace(base.postprocess, **d["postprocess"])
            if "stft" in d:
                d["stft"] = replace(base.stft, **d["stft"])
            return replace(base, **d)
        except (TypeError, ValueError) as exc:
            raise PipelineError("config", str(exc)) from None


# --- runner --------------------------------------------------------------------------


@dataclass
class PipelineResult:
    hyp_intervals: list
    assignment: StreamAssignment
    streams: np.ndarray
    targets: np.ndarray
    der: DerReport
    cpwer: WerReport | None
    cpwer_mapping: dict
    max_abs_error: float
    separation_loss: float
    timing: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {
            "der": self.der.der,
            "missed": self.der.missed,
            "false_alarm": self.der.false_alarm,
            "confusion": self.der.confusion,
            "der_mapping": dict(sorted(self.der.mapping.items())),
            "cpwer": None if self.cpwer is None else self.cpwer.wer,
            "cpwer_counts": None if self.cpwer is None else {
                "S": self.cpwer.substitutions, "D": self.cpwer.deletions,
                "I": self.cpwer.insertions, "n_ref_words": self.cpwer.n_ref_words,
            },
            "cpwer_mapping": dict(sorted(self.cpwer_mapping.items())),
            "max_abs_error": self.max_abs_error,
            "separation_loss": self.separation_loss,
            "n_intervals": len(self.hyp_intervals),
            "streams": [[iv.speaker for iv in self.assignment.on_stream(s)] for s in (0, 1)],
        }
        return out


class _Stages:
    def __init__(self):
        self.timing: dict[str, float] = {}

    @contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except SSNDError as exc:
            raise PipelineError(name, str(exc)) from exc
        except (ValueError, KeyError, IndexError) as exc:
            raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.timing[name] = self.timing.get(name, 0.0) + time.perf_counter() - t0


def build_models(cfg: PipelineConfig, session: Session):
    diarizer = OracleDiarizer(session, cfg.embed_dim) if cfg.diarizer == "oracle" else SubprocessDiarizer(cfg.diarizer)
    separator = OracleSeparator(session, cfg.grid_shift_ms) if cfg.separator == "oracle" else SubprocessSeparator(cfg.separator)
    return diarizer, separator


def run_pipeline(
    cfg: PipelineConfig,
    session: Session,
    diarizer: Diarizer | None = None,
    separator: Separator | None = None,
    recognizer=None,
    hyp_override: Sequence[SpeakerInterval] | None = None,
) -> PipelineResult:
    """Diarise, post-process, embed, assign, separate per segment and score.

    ``hyp_override`` replaces the post-processed intervals, which lets
    callers inject a known diarisation error.
    """
    stage = _Stages()
    if diarizer is None or separator is None:
        d, s = build_models(cfg, session)
        diarizer, separator = diarizer or d, separator or s
    recognizer = recognizer or OracleRecognizer(session)
    mix = session.mixture
    sr = mix.sample_rate
    grid = FrameGrid.for_duration(mix.duration, cfg.grid_shift_ms)

    with stage("diarize"):
        posteriors, frame_emb = diarizer.diarize(mix, grid)
    with stage("postprocess"):
        hyp = list(hyp_override) if hyp_override is not None else decide(posteriors, cfg.postprocess)
    with stage("embed"):
        Y = intervals_to_activity(hyp, grid, posteriors.speakers)
        embeddings = extract_embeddings(frame_emb, Y, cfg.embedding_fallback)
    with stage("assign"):
        assignment = assign_streams(hyp)
    with stage("sequences"):
        dim = np.asarray(frame_emb).shape[1]
        seq0, seq1 = build_embedding_sequences(assignment, embeddings, grid, dim)
    with stage("separate"):
        streams = np.zeros((2, mix.n_samples))
        per_frame = cfg.grid_shift_ms / 1000.0
        for w in plan_segments(mix.duration, cfg.segment_size_s, cfg.segment_shift_s).windows:
            a, b = int(round(w.start * sr)), int(round(w.end * sr))
            f = grid.frames_in(w.start, w.end)
            if abs(w.start / per_frame - round(w.start / per_frame)) > 1e-9:
                raise PipelineError("separate", f"segment start {w.start}s is off the frame grid")
            out = np.asarray(separator.separate(mix.slice(a, b), seq0.values[f], seq1.values[f], start_s=w.start))
            if out.shape != (2, b - a):
                raise PipelineError("separate", f"separator returned {out.shape}, expected (2, {b - a})")
            e = int(round(w.emit_start * sr))
            streams[:, e:b] = out[:, e - a :]
    with stage("targets"):
        targets = build_target_streams(assignment, session.sources, mix.n_samples, sr)
        err = float(np.max(np.abs(streams - targets))) if streams.size else 0.0
        if mix.n_samples >= cfg.stft.win_length:
            est = [stft(streams[s], cfg.stft) for s in (0, 1)]
            ref = [stft(targets[s], cfg.stft) for s in (0, 1)]
            sep_loss = separation_loss(est, ref)
        else:
            sep_loss = 0.0
    with stage("score"):
        der_report = der(session.intervals, hyp, collar_s=0.0, resolution_ms=cfg.grid_shift_ms)
        ref_words = transcripts_by_speaker(session.transcripts())
        stream_of = assignment.stream_of()
        hyp_words: dict[str, list[str]] = {}
        for k in sorted(range(len(hyp)), key=lambda k: (hyp[k].start_ms, hyp[k].speaker)):
            iv = hyp[k]
            words = recognizer.transcribe(streams[stream_of[k]], iv.start, iv.end)
            hyp_words.setdefault(iv.speaker, []).append(" ".join(words))
        if any(" ".join(v).split() for v in ref_words.values()):
            cp, cp_map = cpwer(ref_words, hyp_words)
        else:
            cp, cp_map = None, {}
    return PipelineResult(hyp, assignment, streams, targets, der_report, cp, cp_map, err, sep_loss, stage.timing)
