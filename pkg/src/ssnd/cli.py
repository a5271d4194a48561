"""Command-line entry point: ``ssnd <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import assembly, core, diarpost, dsp, metrics, pipeline, simulate


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))
    else:
        print(text)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


# --- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec_kw = core.load_config(args.spec) if args.spec else {}
    make = simulate.SessionSpec.separation if args.recipe == "separation" else simulate.SessionSpec.diarization
    spec = make(**spec_kw)
    if args.n_speakers is not None:
        spec = replace(spec, n_speakers=args.n_speakers)
    session = simulate.generate_session(spec, seed=args.seed, session_id=args.session_id)
    out = simulate.write_session(session, args.out)
    if args.figures:
        from .plotting import plot_activity
        plot_activity(session.intervals, out / "activity.png", session.session_id)
    payload = {
        "out": str(out),
        "seed": session.seed,
        "duration_s": session.duration,
        "speakers": session.speakers,
        "n_utterances": len(session.utterances),
        "overlap_ratio": session.overlap_ratio(),
        "snr_db": session.snr_db,
    }
    _emit(args, payload, f"wrote {out} ({session.duration:.2f} s, overlap {session.overlap_ratio():.3f})")
    return 0


def cmd_featurize(args) -> int:
    audio = core.read_wav(args.wav)
    cfg = dsp.StftConfig(args.window_ms, args.shift_ms, args.dft_size, audio.sample_rate)
    feats = dsp.featurize(audio, cfg, args.kind)
    if args.normalize:
        feats, _, _ = dsp.normalize(feats)
    if args.subsample > 1:
        feats = dsp.subsample(feats, args.subsample)
    dsp.write_matrix(args.out, feats.values.astype(np.float32), feats.kind, feats.grid)
    _emit(args, {"out": args.out, "frames": feats.n_frames, "dim": feats.dim, "kind": feats.kind},
          f"wrote {args.out}: {feats.n_frames} x {feats.dim} ({feats.kind})")
    return 0


def cmd_decide(args) -> int:
    m = dsp.read_matrix(args.posteriors)
    grid = m.grid or core.FrameGrid(args.shift_ms, None, m.values.shape[0])
    labels = tuple(args.speakers.split(",")) if args.speakers else m.labels
    P = core.PosteriorMatrix(grid, np.clip(m.values.astype(float), 0, 1), labels)
    cfg = diarpost.PostProcessConfig(args.threshold, args.median_len, args.frame_shift_ms)
    intervals = diarpost.decide(P, cfg)
    core.write_rttm(intervals, args.out, args.file_id)
    _emit(args, {"out": args.out, "n_intervals": len(intervals)}, f"wrote {len(intervals)} intervals to {args.out}")
    return 0


def cmd_assign(args) -> int:
    intervals = core.read_rttm(args.rttm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = assembly.assign_streams(intervals)
    assembly.write_assignment(result, out / "assignment.tsv")
    duration = args.duration or max((iv.end for iv in intervals), default=0.0)
    grid = core.FrameGrid.for_duration(duration, args.shift_ms)
    written = ["assignment.tsv"]
    if args.embeddings:
        m = dsp.read_matrix(args.embeddings)
        if len(m.labels) != m.values.shape[0]:
            raise assembly.AssemblyError("speaker embedding matrix needs one label per row")
        embs = dict(zip(m.labels, m.values.astype(float)))
        seq0, seq1 = assembly.build_embedding_sequences(result, embs, grid)
        for s, seq in enumerate((seq0, seq1)):
            dsp.write_matrix(out / f"seq{s}.mat", seq.values.astype(np.float32), "embseq", grid)
            written.append(f"seq{s}.mat")
    if args.sources:
        sources, rate = {}, core.SAMPLE_RATE
        for p in sorted(Path(args.sources).glob("*.wav")):
            a = core.read_wav(p)
            sources[p.stem], rate = a.samples[0], a.sample_rate
        n = max((len(v) for v in sources.values()), default=0)
        streams = assembly.build_target_streams(result, sources, n, rate)
        for s in (0, 1):
            core.write_wav(streams[s], out / f"stream{s}.wav", rate)
            written.append(f"stream{s}.wav")
    if args.figures:
        from .plotting import plot_streams
        plot_streams(result, out / "streams.png")
        written.append("streams.png")
    counts = [len(result.on_stream(s)) for s in (0, 1)]
    _emit(args, {"out": str(out), "files": written, "per_stream": counts},
          f"assigned {len(intervals)} intervals: {counts[0]} on stream 0, {counts[1]} on stream 1")
    return 0


def cmd_plan(args) -> int:
    plan = assembly.plan_segments(args.length, args.size, args.shift)
    rows = [{"start": w.start, "end": w.end, "emit_start": w.emit_start} for w in plan.windows]
    text = "\n".join(f"{w.start:.3f}\t{w.end:.3f}\t{w.emit_start:.3f}" for w in plan.windows)
    _emit(args, {"size_s": plan.size_s, "shift_s": plan.shift_s, "windows": rows}, "start\tend\temit_start\n" + text)
    return 0


def cmd_score_der(args) -> int:
    ref, hyp = core.read_rttm(args.ref), core.read_rttm(args.hyp)
    r = metrics.der(ref, hyp, args.collar, args.resolution_ms)
    if args.csv:
        metrics.write_der_csv([(Path(args.hyp).stem, args.condition, r)], args.csv)
    _emit(args, metrics.report_dict(r),
          f"DER {100 * r.der:.2f}%  (MI {100 * r.missed:.2f}  FA {100 * r.false_alarm:.2f}  CF {100 * r.confusion:.2f})")
    return 0


def cmd_score_cpwer(args) -> int:
    ref = core.transcripts_by_speaker(core.read_manifest(args.ref))
    hyp = core.transcripts_by_speaker(core.read_manifest(args.hyp))
    r, mapping = metrics.cpwer(ref, hyp, args.method, normalize=not args.no_normalize)
    if args.csv:
        metrics.write_cpwer_csv([(Path(args.hyp).stem, args.condition, r)], args.csv)
    _emit(args, {**metrics.report_dict(r), "mapping": mapping},
          f"cpWER {100 * r.wer:.2f}%  (S {r.substitutions}  D {r.deletions}  I {r.insertions}  N {r.n_ref_words})")
    return 0


def cmd_sweep(args) -> int:
    ref = core.read_rttm(args.ref)
    duration = max((iv.end for iv in ref), default=0.0)
    speakers = sorted({iv.speaker for iv in ref})
    P = {}
    for item in args.posteriors or []:
        shift, path = item.split("=", 1)
        m = dsp.read_matrix(path)
        grid = m.grid or core.FrameGrid(float(shift), None, m.values.shape[0])
        P[float(shift)] = core.PosteriorMatrix(grid, np.clip(m.values.astype(float), 0, 1), m.labels)
    for k, shift in enumerate(args.shifts):
        if shift not in P:
            grid = core.FrameGrid.for_duration(duration, shift)
            P[shift] = diarpost.noisy_posteriors(ref, grid, args.noise, seed=args.seed + k, speakers=speakers)
    rows = diarpost.tuning_sweep(P, ref, args.taus, args.shifts, args.median_len)
    diarpost.write_sweep_csv(rows, args.out)
    if args.figure:
        from .plotting import plot_sweep
        plot_sweep(rows, args.figure)
    text = "\n".join(
        f"{r.shift_ms:g} ms  tau={r.tau:g}  DER {100 * r.der:.2f}  MI {100 * r.mi:.2f}  FA {100 * r.fa:.2f}  CF {100 * r.cf:.2f}"
        for r in rows
    )
    _emit(args, {"out": args.out, "rows": diarpost.sweep_dicts(rows)}, text)
    return 0


def cmd_pipeline(args) -> int:
    overrides = core.load_config(args.config)
    base = pipeline.PipelineConfig.oracle() if args.oracle else pipeline.PipelineConfig()
    cfg = pipeline.PipelineConfig.from_dict(overrides, base)
    if args.diarizer_cmd:
        cfg = replace(cfg, diarizer=args.diarizer_cmd)
    if args.separator_cmd:
        cfg = replace(cfg, separator=args.separator_cmd)
    if args.session:
        session = simulate.read_session(args.session)
    else:
        seed = cfg.seed if args.seed is None else args.seed
        session = simulate.generate_session(simulate.SessionSpec(), seed=seed)
    result = pipeline.run_pipeline(cfg, session)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"session": session.session_id, "seed": session.seed, "config": cfg.to_dict(), **result.summary()}
    core.dump_json(report, out / "report.json")
    core.dump_json(result.timing, out / "timing.json")
    core.write_rttm(result.hyp_intervals, out / "hyp.rttm", session.session_id)
    assembly.write_assignment(result.assignment, out / "assignment.tsv")
    metrics.write_der_csv([(session.session_id, "all", result.der)], out / "der.csv")
    if result.cpwer is not None:
        metrics.write_cpwer_csv([(session.session_id, "all", result.cpwer)], out / "cpwer.csv")
    for s in (0, 1):
        core.write_wav(result.streams[s], out / f"stream{s}.wav", session.mixture.sample_rate)
    if args.figures:
        from .plotting import plot_activity, plot_streams
        plot_streams(result.assignment, out / "streams.png", f"{session.session_id} streams")
        plot_activity(result.hyp_intervals, out / "activity.png", f"{session.session_id} diarisation")
    cp = "n/a" if result.cpwer is None else f"{100 * result.cpwer.wer:.2f}%"
    _emit(args, report, f"DER {100 * result.der.der:.2f}%  cpWER {cp}  max|stream-target| {result.max_abs_error:.3g}")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssnd", description="Speaker separation via neural diarisation toolkit")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a seeded meeting session")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--recipe", choices=("diarization", "separation"), default="diarization")
    s.add_argument("--spec", help="JSON file of session spec overrides")
    s.add_argument("--n-speakers", type=int)
    s.add_argument("--session-id")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("featurize", help="compute features from a WAV file")
    s.add_argument("wav")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=("logmel", "spliced", "ipd", "fused"), default="fused")
    s.add_argument("--window-ms", type=float, default=25.0)
    s.add_argument("--shift-ms", type=float, default=10.0)
    s.add_argument("--dft-size", type=int, default=512)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--subsample", type=int, default=1)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("decide", help="posteriors matrix -> RTTM")
    s.add_argument("posteriors")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--median-len", type=int, default=31)
    s.add_argument("--frame-shift-ms", type=float)
    s.add_argument("--shift-ms", type=float, default=10.0, help="grid shift when the file carries none")
    s.add_argument("--speakers", help="comma-separated column labels")
    s.add_argument("--file-id", default="session")
    s.set_defaults(func=cmd_decide)

    s = sub.add_parser("assign", help="RTTM -> two-stream assignment, sequences and targets")
    s.add_argument("rttm")
    s.add_argument("--out", required=True)
    s.add_argument("--embeddings", help="speaker embedding matrix (rows labelled by speaker)")
    s.add_argument("--sources", help="directory of per-speaker reference WAVs")
    s.add_argument("--shift-ms", type=float, default=10.0)
    s.add_argument("--duration", type=float)
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_assign)

    s = sub.add_parser("plan", help="segment plan for a session length")
    s.add_argument("--length", type=float, required=True)
    s.add_argument("--size", type=float, default=30.0)
    s.add_argument("--shift", type=float, default=27.0)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("score-der", help="DER between two RTTM files")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--collar", type=float, default=0.0)
    s.add_argument("--resolution-ms", type=float, default=10.0)
    s.add_argument("--condition", default="all")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_score_der)

    s = sub.add_parser("score-cpwer", help="cpWER between two transcript manifests")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--method", choices=("hungarian", "brute"), default="hungarian")
    s.add_argument("--no-normalize", action="store_true")
    s.add_argument("--condition", default="all")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_score_cpwer)

    s = sub.add_parser("sweep", help="DER over frame shifts and thresholds")
    s.add_argument("ref")
    s.add_argument("--out", required=True, help="CSV output")
    s.add_argument("--posteriors", nargs="*", metavar="SHIFT=FILE")
    s.add_argument("--shifts", type=float, nargs="+", default=[30.0, 40.0, 50.0])
    s.add_argument("--taus", type=float, nargs="+", default=[0.5, 0.3])
    s.add_argument("--median-len", type=int, default=31)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--figure")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("pipeline", help="end-to-end run with oracle or external models")
    s.add_argument("--session", help="session directory written by `simulate`")
    s.add_argument("--seed", type=int)
    s.add_argument("--oracle", action="store_true", help="oracle preset (no median smoothing)")
    s.add_argument("--config", help="JSON pipeline config (default: $SSND_CONFIG)")
    s.add_argument("--diarizer-cmd")
    s.add_argument("--separator-cmd")
    s.add_argument("--out", required=True)
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except core.SSNDError as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"ssnd {args.command}: error [{stage}]: {getattr(exc, 'message', exc)}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"ssnd {args.command}: error [{args.command}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
