import csv

import numpy as np
import pytest

from ssnd.core import ActivityMatrix, FrameGrid, PosteriorMatrix, SpeakerInterval as I, intervals_to_activity
from ssnd.diarpost import (
    PostProcessConfig,
    PostProcessError,
    decide,
    median_filter,
    noisy_posteriors,
    sweep_dicts,
    threshold,
    tuning_sweep,
    write_sweep_csv,
)


def windowed_majority(col, length):
    h = length // 2
    out = np.empty_like(col)
    for t in range(len(col)):
        w = col[max(0, t - h) : t + h + 1]
        ones = int(w.sum())
        if 2 * ones > len(w):
            out[t] = 1
        elif 2 * ones < len(w):
            out[t] = 0
        else:
            out[t] = col[t]
    return out


def _P(values, shift=10):
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return PosteriorMatrix(FrameGrid(shift, None, v.shape[0]), v)


def test_config_validation():
    with pytest.raises(PostProcessError):
        PostProcessConfig(threshold=1.0)
    with pytest.raises(PostProcessError):
        PostProcessConfig(median_len=30)
    assert PostProcessConfig().median_len == 31 and PostProcessConfig().threshold == 0.5


def test_threshold_examples():
    assert threshold(_P(np.full((5, 2), 0.6)), 0.5).values.all()
    assert threshold(_P([0.5, 0.49]), 0.5).values[:, 0].tolist() == [1, 0]
    with pytest.raises(PostProcessError):
        threshold(_P([0.5]), 0.0)


def test_threshold_monotone(rng):
    P = _P(rng.uniform(0, 1, (100, 3)))
    taus = np.sort(rng.uniform(0.01, 0.99, 20))
    for lo, hi in zip(taus, taus[1:]):
        assert (threshold(P, lo).values >= threshold(P, hi).values).all()


def test_median_filter_examples():
    g = FrameGrid(10, None, 50)
    const = ActivityMatrix(g, np.ones((50, 1)), ("a",))
    np.testing.assert_array_equal(median_filter(const).values, const.values)
    v = np.zeros((50, 1))
    v[25] = 1
    assert not median_filter(ActivityMatrix(g, v, ("a",)), 31).values.any()
    with pytest.raises(PostProcessError):
        median_filter(const, 4)
    assert median_filter(const, 1) is const


def test_median_filter_matches_oracle(rng):
    for _ in range(100):
        T, C = int(rng.integers(1, 80)), int(rng.integers(1, 4))
        L = int(rng.choice([3, 5, 7, 31]))
        v = (rng.random((T, C)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        out = median_filter(ActivityMatrix(FrameGrid(10, None, T), v, tuple("abc"[:C])), L).values
        for c in range(C):
            np.testing.assert_array_equal(out[:, c], windowed_majority(v[:, c], L))


def test_median_filter_idempotent_on_long_runs(rng):
    runs = rng.integers(16, 40, 12)
    col = np.concatenate([np.full(r, k % 2) for k, r in enumerate(runs)])
    Y = ActivityMatrix(FrameGrid(10, None, col.size), col[:, None], ("a",))
    once = median_filter(Y, 31)
    np.testing.assert_array_equal(median_filter(once, 31).values, once.values)


def test_decide_clean_utterance():
    iv = I("spk0", 1.0, 2.5)
    grid = FrameGrid.for_duration(4.0, 10)
    P = PosteriorMatrix(grid, intervals_to_activity([iv], grid).values.astype(float), ("spk0",))
    (out,) = decide(P)
    assert abs(out.start - iv.start) <= 0.01 and abs(out.end - iv.end) <= 0.01
    assert decide(PosteriorMatrix(grid, np.zeros((grid.n_frames, 2)))) == []


def test_decide_heals_short_dropout():
    v = np.zeros(300)
    v[50:250] = 0.9
    v[140:145] = 0.1  # 5-frame dropout
    out = decide(_P(v), PostProcessConfig(0.5, 31))
    assert len(out) == 1
    assert (out[0].start, out[0].end) == (0.5, 2.5)
    # without filtering the dropout splits the interval
    assert len(decide(_P(v), PostProcessConfig(0.5, 1))) == 2


def test_decide_resamples_to_coarser_grid():
    v = np.zeros(100)
    v[20:60] = 1
    out = decide(_P(v), PostProcessConfig(0.5, 1, frame_shift_ms=50))
    assert [(iv.start, iv.end) for iv in out] == [(0.2, 0.6)]
    with pytest.raises(PostProcessError):
        decide(_P(v), PostProcessConfig(0.5, 1, frame_shift_ms=15))


def test_decide_never_overlaps_per_speaker(rng):
    P = _P(rng.uniform(0, 1, (400, 3)))
    out = decide(P, PostProcessConfig(0.4, 5))
    for spk in {iv.speaker for iv in out}:
        ivs = sorted((iv for iv in out if iv.speaker == spk), key=lambda iv: iv.start_ms)
        assert all(a.end_ms < b.start_ms for a, b in zip(ivs, ivs[1:]))


# --- sweep ------------------------------------------------------------------------------


# on a 600 ms raster, at least 31 frames from either end of the file at every shift
REF = [I("a", 1.8, 4.2), I("b", 3.0, 7.2), I("a", 8.4, 12.0), I("c", 10.2, 13.2)]


def _perfect(shift):
    grid = FrameGrid.for_duration(15.0, shift)
    act = intervals_to_activity(REF, grid, ["a", "b", "c"])
    return PosteriorMatrix(grid, act.values.astype(float), act.speakers)


def test_sweep_perfect_posteriors():
    P = {s: _perfect(s) for s in (30.0, 40.0, 50.0)}
    rows = tuning_sweep(P, REF, (0.5, 0.3), median_len=1)
    assert len(rows) == 6
    assert all(r.der == 0 for r in rows)
    rows = tuning_sweep(P, REF, (0.5,), median_len=31)
    assert all(r.der == 0 for r in rows)


def test_shrunken_edge_windows_spread_onsets():
    # a shrunken window at the file start reaches a majority earlier than the true onset
    v = np.zeros(100)
    v[12:] = 1
    out = median_filter(ActivityMatrix(FrameGrid(50, None, 100), v[:, None], ("a",)), 31).values[:, 0]
    assert out[:9].sum() == 0 and out[9:].all()


def test_sweep_monotone_in_threshold():
    taus = (0.7, 0.5, 0.3, 0.1)
    for seed in range(5):
        P = {s: noisy_posteriors(REF, FrameGrid.for_duration(15.0, s), 0.3, seed=seed, speakers=["a", "b", "c"]) for s in (30.0, 50.0)}
        rows = tuning_sweep(P, REF, taus, median_len=11)
        for shift in (30.0, 50.0):
            by_tau = sorted((r for r in rows if r.shift_ms == shift), key=lambda r: r.tau)
            fa = [r.fa for r in by_tau]
            mi = [r.mi for r in by_tau]
            assert all(a >= b - 1e-12 for a, b in zip(fa, fa[1:])), fa
            assert all(a <= b + 1e-12 for a, b in zip(mi, mi[1:])), mi


def test_sweep_missing_shift():
    with pytest.raises(PostProcessError):
        tuning_sweep({30.0: _perfect(30.0)}, REF, (0.5,), (30.0, 40.0))


def test_sweep_csv(tmp_path):
    rows = tuning_sweep({30.0: _perfect(30.0)}, REF, (0.5, 0.3), median_len=1)
    write_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "shift_ms,tau,der,mi,fa,cf"
    assert lines[1] == "30,0.5,0.000000,0.000000,0.000000,0.000000"
    assert sweep_dicts(rows)[1]["tau"] == 0.3


def test_noisy_posteriors_deterministic():
    grid = FrameGrid.for_duration(15.0, 10)
    a = noisy_posteriors(REF, grid, seed=3)
    b = noisy_posteriors(REF, grid, seed=3)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.speakers == ("a", "b", "c")
    assert ((a.values >= 0) & (a.values <= 1)).all()
