"""Posterior post-processing: threshold, median filter, interval extraction."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ActivityMatrix,
    FrameGrid,
    PosteriorMatrix,
    SpeakerInterval,
    SSNDError,
    activity_to_intervals,
    intervals_to_activity,
)
from .dsp import subsample
from .metrics import der


class PostProcessError(SSNDError, ValueError):
    stage = "diarpost"


@dataclass(frozen=True)
class PostProcessConfig:
    threshold: float = 0.5
    median_len: int = 31
    frame_shift_ms: float | None = None  # None: use the posterior grid as is

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise PostProcessError("threshold must lie in (0, 1)")
        if self.median_len < 1 or self.median_len % 2 == 0:
            raise PostProcessError("median_len must be odd and >= 1")


def threshold(P: PosteriorMatrix, tau: float) -> ActivityMatrix:
    """``p >= tau`` is active."""
    if not 0.0 < tau < 1.0:
        raise PostProcessError("threshold must lie in (0, 1)")
    return ActivityMatrix(P.grid, (P.values >= tau).astype(np.uint8), P.speakers)


def median_filter(Y: ActivityMatrix, length: int = 31) -> ActivityMatrix:
    """Centred binary median (majority vote) per speaker.

    Windows are truncated at the edges; a tie inside a truncated window
    keeps the frame's own value.
    """
    if length < 1 or length % 2 == 0:
        raise PostProcessError(f"median length must be odd, got {length}")
    if length == 1 or Y.n_frames == 0:
        return Y
    h = length // 2
    v = Y.values.astype(np.int64)
    T = v.shape[0]
    csum = np.vstack([np.zeros((1, v.shape[1]), dtype=np.int64), np.cumsum(v, axis=0)])
    t = np.arange(T)
    lo = np.maximum(t - h, 0)
    hi = np.minimum(t + h + 1, T)
    ones = csum[hi] - csum[lo]
    size = (hi - lo)[:, None]
    out = np.where(2 * ones > size, 1, np.where(2 * ones < size, 0, v))
    return ActivityMatrix(Y.grid, out.astype(np.uint8), Y.speakers, Y.azimuths)


def _on_grid(P: PosteriorMatrix, shift_ms: float | None) -> PosteriorMatrix:
    if shift_ms is None or shift_ms == P.grid.shift_ms:
        return P
    ratio = shift_ms / P.grid.shift_ms
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise PostProcessError(
            f"cannot move posteriors from a {P.grid.shift_ms} ms grid to a {shift_ms} ms grid"
        )
    return subsample(P, int(round(ratio)))


def decide(P: PosteriorMatrix, cfg: PostProcessConfig = PostProcessConfig()) -> list[SpeakerInterval]:
    P = _on_grid(P, cfg.frame_shift_ms)
    return activity_to_intervals(median_filter(threshold(P, cfg.threshold), cfg.median_len))


def noisy_posteriors(
    intervals: Sequence[SpeakerInterval],
    grid: FrameGrid,
    noise: float = 0.25,
    smooth: int = 5,
    seed: int = 0,
    speakers: Sequence[str] | None = None,
) -> PosteriorMatrix:
    """Synthetic diariser output: smoothed truth plus clipped Gaussian noise."""
    rng = np.random.default_rng(seed)
    Y = intervals_to_activity(intervals, grid, speakers).values.astype(float)
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        Y = np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="same"), 0, Y)
    P = np.clip(Y + noise * rng.standard_normal(Y.shape), 0.0, 1.0)
    return PosteriorMatrix(grid, P, speakers or sorted({iv.speaker for iv in intervals}))


@dataclass(frozen=True)
class SweepRow:
    shift_ms: float
    tau: float
    der: float
    mi: float
    fa: float
    cf: float


def tuning_sweep(
    P_per_shift: Mapping[float, PosteriorMatrix],
    Y_ref: Sequence[SpeakerInterval],
    tau_grid: Sequence[float] = (0.5, 0.3),
    shift_grid: Sequence[float] | None = None,
    median_len: int = 31,
    collar_s: float = 0.0,
) -> list[SweepRow]:
    """Score every (frame shift, threshold) setting against ``Y_ref``."""
    shifts = list(shift_grid) if shift_grid is not None else sorted(P_per_shift)
    rows = []
    for tau in tau_grid:
        for shift in shifts:
            if shift not in P_per_shift:
                raise PostProcessError(f"no posteriors for a {shift} ms shift")
            hyp = decide(P_per_shift[shift], PostProcessConfig(tau, median_len))
            r = der(Y_ref, hyp, collar_s=collar_s, resolution_ms=_gcd_ms(shift))
            rows.append(SweepRow(shift, tau, r.der, r.missed, r.false_alarm, r.confusion))
    return rows


def _gcd_ms(shift) -> float:
    # score on a 1 ms raster whenever the shift is not a multiple of 10 ms
    return 10 if float(shift) % 10 == 0 else 1


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["shift_ms", "tau", "der", "mi", "fa", "cf"])
        for r in rows:
            w.writerow([f"{r.shift_ms:g}", f"{r.tau:g}", f"{r.der:.6f}", f"{r.mi:.6f}", f"{r.fa:.6f}", f"{r.cf:.6f}"])


def sweep_dicts(rows: Sequence[SweepRow]) -> list[dict]:
    return [asdict(r) for r in rows]
