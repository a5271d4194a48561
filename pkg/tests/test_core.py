import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssnd.core import (
    CONFIG_ENV,
    ActivityMatrix,
    AudioFormatError,
    FrameGrid,
    MultichannelAudio,
    PosteriorMatrix,
    RttmParseError,
    SpeakerInterval,
    TranscriptRecord,
    UnknownSpeakerError,
    activity_to_intervals,
    intervals_to_activity,
    load_config,
    parse_rttm,
    read_manifest,
    read_rttm,
    read_wav,
    to_ms,
    transcripts_by_speaker,
    write_manifest,
    write_rttm,
    write_wav,
)


def membership_oracle(intervals, grid, speakers):
    """Per-frame check: is the frame centre inside any of the speaker's intervals."""
    out = np.zeros((grid.n_frames, len(speakers)), dtype=np.uint8)
    for t in range(grid.n_frames):
        centre_ms = (t + 0.5) * grid.shift_ms
        for c, spk in enumerate(speakers):
            out[t, c] = any(iv.speaker == spk and iv.start_ms <= centre_ms < iv.end_ms for iv in intervals)
    return out


# --- frame grid -----------------------------------------------------------------


def test_grid_invariants():
    with pytest.raises(ValueError):
        FrameGrid(0)
    with pytest.raises(ValueError):
        FrameGrid(10, 5)
    g = FrameGrid(10, 25, 7)
    assert g.window_ms == 25 and g.shift_s == 0.01
    assert FrameGrid(10).window_ms == 10


def test_grid_for_duration_and_conversions():
    g = FrameGrid.for_duration(1.0, 10)
    assert g.n_frames == 100
    assert FrameGrid.for_duration(1.005, 10).n_frames == 101
    assert FrameGrid.for_duration(0.0, 10).n_frames == 0
    # seconds -> frame -> seconds stays within one shift
    for sec in np.arange(0, 1000, 27) / 1000:
        t = g.frame_of(sec)
        assert 0 <= sec - g.frame_start(t) < g.shift_s + 1e-12


def test_with_shift_rounds_up():
    g = FrameGrid(10, 25, 11).with_shift(5)
    assert (g.shift_ms, g.n_frames, g.window_ms) == (50, 3, 50)


# --- intervals ------------------------------------------------------------------


def test_interval_snaps_to_ms():
    iv = SpeakerInterval("a", 0.1 + 0.2, 0.70004)
    assert iv.start == 0.3 and iv.end == 0.7
    assert iv.start_ms == 300 and iv.duration == 0.4
    with pytest.raises(ValueError):
        SpeakerInterval("a", 1.0, 1.0)
    with pytest.raises(ValueError):
        SpeakerInterval("a", -0.5, 1.0)


def test_interval_overlap_is_half_open():
    a = SpeakerInterval("a", 0, 1)
    assert not a.overlaps(SpeakerInterval("b", 1, 2))
    assert a.overlaps(SpeakerInterval("b", 0.999, 2))


def test_one_second_interval_fills_100_frames():
    grid = FrameGrid.for_duration(1.0, 10)
    act = intervals_to_activity([SpeakerInterval("a", 0.0, 1.0)], grid)
    assert act.values.shape == (100, 1)
    assert act.values.all()


def test_empty_interval_list_gives_zero_matrix():
    grid = FrameGrid(10, None, 50)
    act = intervals_to_activity([], grid, ["a", "b"])
    assert act.values.shape == (50, 2) and not act.values.any()


def test_abutting_intervals_are_contiguous():
    ivs = [SpeakerInterval("a", 0, 1), SpeakerInterval("a", 1, 2)]
    grid = FrameGrid.for_duration(2.5, 10)
    act = intervals_to_activity(ivs, grid)
    col = act.values[:, 0]
    assert col.sum() == 200
    assert col[:200].all() and not col[200:].any()
    np.testing.assert_array_equal(act.values, membership_oracle(ivs, grid, ["a"]))


def test_unknown_speaker_raises():
    with pytest.raises(UnknownSpeakerError):
        intervals_to_activity([SpeakerInterval("z", 0, 1)], FrameGrid(10, None, 100), ["a"])


def test_rasterisation_matches_membership_oracle(rng):
    for _ in range(30):
        speakers = ["a", "b", "c"]
        ivs = []
        for _ in range(rng.integers(0, 8)):
            s = int(rng.integers(0, 3000))
            ivs.append(SpeakerInterval(speakers[rng.integers(3)], s / 1000, (s + int(rng.integers(1, 900))) / 1000))
        shift = float(rng.choice([10, 25, 30, 40, 50]))
        grid = FrameGrid.for_duration(4.0, shift)
        act = intervals_to_activity(ivs, grid, speakers)
        np.testing.assert_array_equal(act.values, membership_oracle(ivs, grid, speakers))


def test_activity_to_intervals_examples():
    grid = FrameGrid(10, None, 20)
    assert activity_to_intervals(ActivityMatrix(grid, np.zeros((20, 2)), ("a", "b"))) == []
    v = np.zeros((20, 1))
    v[5:10] = 1
    (iv,) = activity_to_intervals(ActivityMatrix(grid, v, ("a",)))
    assert (iv.speaker, iv.start, iv.end) == ("a", 0.05, 0.10)


def test_activity_round_trip_random(rng):
    for _ in range(200):
        T, C = int(rng.integers(1, 201)), int(rng.integers(1, 9))
        shift = float(rng.choice([10, 20, 50]))
        act = ActivityMatrix(FrameGrid(shift, None, T), rng.integers(0, 2, (T, C)), tuple(f"s{c}" for c in range(C)))
        back = intervals_to_activity(activity_to_intervals(act), act.grid, act.speakers)
        np.testing.assert_array_equal(back.values, act.values)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5000), st.integers(1, 2000)), max_size=6), st.sampled_from([10, 20, 50]))
def test_interval_round_trip_within_one_frame(spans, shift):
    ivs = []
    for s, d in spans:
        iv = SpeakerInterval("a", s / 1000, (s + d) / 1000)
        if not any(iv.overlaps(o) or iv.start_ms == o.end_ms or o.start_ms == iv.end_ms for o in ivs):
            ivs.append(iv)
    grid = FrameGrid.for_duration(7.5, shift)
    back = activity_to_intervals(intervals_to_activity(ivs, grid, ["a"]))
    # each boundary moves by at most one frame; intervals shorter than a frame may vanish
    for iv in back:
        src = [o for o in ivs if o.start_ms - shift <= iv.start_ms and iv.end_ms <= o.end_ms + shift]
        assert src, iv
    for o in ivs:
        if o.duration >= 2 * shift / 1000:
            assert any(abs(iv.start_ms - o.start_ms) <= shift and abs(iv.end_ms - o.end_ms) <= shift for iv in back)


def test_matrix_types_validate():
    with pytest.raises(ValueError):
        ActivityMatrix(FrameGrid(10), np.full((3, 1), 2), ("a",))
    with pytest.raises(ValueError):
        ActivityMatrix(FrameGrid(10), np.zeros((3, 2)), ("a",))
    with pytest.raises(ValueError):
        ActivityMatrix(FrameGrid(10), np.zeros((3, 2)), ("a", "b"), azimuths=(1.0,))
    with pytest.raises(ValueError):
        PosteriorMatrix(FrameGrid(10), np.full((3, 1), 1.5))
    P = PosteriorMatrix(FrameGrid(10), np.zeros((4, 2)))
    assert P.speakers == ("spk0", "spk1") and P.grid.n_frames == 4
    with pytest.raises(ValueError):
        P.values[0, 0] = 1.0


def test_multichannel_audio_checks():
    a = MultichannelAudio(np.zeros(5))
    assert a.n_channels == 1 and a.n_samples == 5
    with pytest.raises(ValueError):
        MultichannelAudio(np.zeros((2, 5)), geometry=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        MultichannelAudio(np.zeros((2, 5)), ref_channel=2)
    b = MultichannelAudio(np.arange(10.0).reshape(2, 5), ref_channel=1)
    np.testing.assert_array_equal(b.reference, [5, 6, 7, 8, 9])
    np.testing.assert_array_equal(b.slice(1, 3).samples, [[1, 2], [6, 7]])


# --- RTTM -----------------------------------------------------------------------


def test_rttm_field_mapping():
    (iv,) = parse_rttm(["SPEAKER sess 1 0.50 2.00 <NA> <NA> spkA <NA> <NA>"])
    assert (iv.speaker, iv.start, iv.end) == ("spkA", 0.5, 2.5)


def test_rttm_empty_file(tmp_path):
    p = tmp_path / "e.rttm"
    p.write_text("")
    assert read_rttm(p) == []


def test_rttm_skips_other_record_types():
    lines = ["# comment", "", "SPKR-INFO sess 1 <NA> <NA> <NA> unknown spkA <NA>", "SPEAKER s 1 1 1 <NA> <NA> b <NA> <NA>"]
    assert [iv.speaker for iv in parse_rttm(lines)] == ["b"]


@pytest.mark.parametrize(
    "line",
    [
        "SPEAKER sess 1 0.5",
        "SPEAKER sess 1 x 2.0 <NA> <NA> a <NA> <NA>",
        "SPEAKER sess 1 0.5 0 <NA> <NA> a <NA> <NA>",
        "SPEAKER sess 1 -1 1 <NA> <NA> a <NA> <NA>",
    ],
)
def test_rttm_malformed_reports_line(line):
    with pytest.raises(RttmParseError) as exc:
        parse_rttm(["SPEAKER s 1 0 1 <NA> <NA> a <NA> <NA>", line])
    assert exc.value.lineno == 2
    assert "line 2" in str(exc.value)


def test_rttm_round_trip_1000(tmp_path, rng):
    ivs = []
    for k in range(1000):
        s = int(rng.integers(0, 10**6))
        ivs.append(SpeakerInterval(f"spk{k % 13}", s / 1000, (s + int(rng.integers(1, 10**5))) / 1000))
    p = tmp_path / "r.rttm"
    write_rttm(ivs, p)
    key = lambda iv: (iv.start_ms, iv.speaker, iv.end_ms)
    assert sorted(read_rttm(p), key=key) == sorted(ivs, key=key)


# --- manifests and config -----------------------------------------------------


def test_manifest_round_trip(tmp_path):
    recs = [
        TranscriptRecord("s", "b", 2.0, 3.0, "later words"),
        TranscriptRecord("s", "a", 0.5, 1.0, "hello there"),
        TranscriptRecord("s", "b", 0.0, 1.0, "first"),
        TranscriptRecord("s", "c", 0.0, 1.0, ""),
    ]
    p = tmp_path / "m.tsv"
    write_manifest(recs, p)
    assert read_manifest(p) == recs
    grouped = transcripts_by_speaker(recs)
    assert grouped == {"b": ["first", "later words"], "a": ["hello there"], "c": [""]}


def test_config_env_fallback(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text('{"grid_shift_ms": 20}')
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    assert load_config() == {}
    monkeypatch.setenv(CONFIG_ENV, str(p))
    assert load_config() == {"grid_shift_ms": 20}


# --- WAV ------------------------------------------------------------------------


def test_wav_zero_length_file_errors(tmp_path):
    p = tmp_path / "z.wav"
    p.write_bytes(b"")
    with pytest.raises(AudioFormatError):
        read_wav(p)
    with pytest.raises(AudioFormatError):
        write_wav(np.zeros((1, 0)), tmp_path / "n.wav")


def test_wav_single_sample_mono(tmp_path):
    p = tmp_path / "one.wav"
    write_wav(np.array([0.25]), p)
    a = read_wav(p)
    assert a.samples.shape == (1, 1) and a.samples[0, 0] == 0.25


def test_wav_seven_channel_float_bitwise(tmp_path, rng):
    x = rng.uniform(-1, 1, (7, 1234)).astype(np.float32)
    p = tmp_path / "m.wav"
    write_wav(MultichannelAudio(x.astype(np.float64), 16000), p)
    a = read_wav(p)
    assert a.sample_rate == 16000
    assert a.samples.astype(np.float32).tobytes() == x.tobytes()


def test_wav_pcm16_scaled(tmp_path, rng):
    x = rng.uniform(-0.9, 0.9, (2, 500))
    p = tmp_path / "p.wav"
    write_wav(x, p, pcm16=True)
    a = read_wav(p)
    assert np.abs(a.samples).max() <= 1.0
    assert np.abs(a.samples - x).max() <= 0.5 / 32768 + 1e-12


def test_wav_unsupported_encoding(tmp_path):
    from scipy.io import wavfile

    p = tmp_path / "u8.wav"
    wavfile.write(p, 16000, np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(AudioFormatError):
        read_wav(p)


def test_to_ms_rounding():
    assert to_ms(1.2345678) == 1235
    assert math.isclose(to_ms(3.0) / 1000, 3.0)
