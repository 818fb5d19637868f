"""Command-line interface tying the pipeline together.

Subcommands: synth (dataset generation), extract-notes (curve to score),
train (two-phase rectified-flow training), apc / svs / svc (the three
inference tasks), and eval (melody metrics plus vibrato probes over
directories of pitch files).

Every command takes --config (INI-style run config), --seed, and
--set section.key=value overrides, and is deterministic: identical
inputs and seed produce byte-identical output artifacts.

Exit codes form a stable contract:
    0  success
    1  usage error or unparseable content (bad flags, malformed files)
    2  I/O failure (missing files or directories)
    3  numeric failure (non-finite loss or diverged integration)
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import flow, metrics, plotting, score, synth, tasks
from .curves import (
    MIDI_CENTER,
    MIDI_LO,
    REST_CLASS,
    ModelSequence,
    PitchCurve,
    SemitoneCurve,
    load_pitch_file,
    normalize_pitch,
    resample_curve,
    save_pitch_file,
    semitone_to_hz,
    to_semitone_curve,
)
from .model import NULL_UNVOICED_INDEX, VelocityNet, load_checkpoint
from .runconfig import RunConfig, load_run_config

MODEL_FRAME_RATE_HZ = 50.0


class UsageError(Exception):
    """Bad invocation: wrong flags or arguments (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments, but this tool
    # reserves 2 for I/O failures; route parse errors to exit code 1.
    def error(self, message: str) -> None:
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_path(value: str | None, fallback: str | None, what: str, key: str) -> Path:
    if value is not None:
        return Path(value)
    if fallback:
        return Path(fallback)
    raise UsageError(f"missing {what}: pass it on the command line or set [paths] {key}")


def _load_model_curve(path: str | Path) -> SemitoneCurve:
    """Load a pitch file and bring it to the model frame rate."""
    curve = to_semitone_curve(load_pitch_file(path))
    if curve.frame_rate_hz != MODEL_FRAME_RATE_HZ:
        curve = resample_curve(curve, curve.frame_rate_hz, MODEL_FRAME_RATE_HZ)
    return curve


def _seq_from_curve(
    curve: SemitoneCurve, events: list[score.NoteEvent] | None, cfg: RunConfig
) -> ModelSequence:
    """Build the model-facing sequence for a performed take.

    With no events given, the note track is extracted from the curve
    itself; voicing comes from the curve either way.
    """
    if events is None:
        _, y = score.extract_score(curve, cfg.score)
    else:
        y = score.notes_to_frames(events, len(curve))
    u = (~curve.voiced).astype(np.int64)
    return ModelSequence(x=normalize_pitch(curve.semitones), y=y, u=u)


def _empty_sequence() -> ModelSequence:
    return ModelSequence(
        x=np.zeros(0), y=np.zeros(0, dtype=np.int64), u=np.zeros(0, dtype=np.int64)
    )


def _score_curve(y: np.ndarray, frame_rate_hz: float) -> SemitoneCurve:
    """Reference curve for a note track: class centers, rests unvoiced."""
    voiced = y != REST_CLASS
    semitones = np.where(voiced, y.astype(np.float64) + MIDI_LO, MIDI_CENTER)
    return SemitoneCurve(semitones=semitones, voiced=voiced, frame_rate_hz=frame_rate_hz)


def _save_generated(path: str | Path, gen: SemitoneCurve) -> None:
    f0 = np.where(gen.voiced, semitone_to_hz(gen.semitones), 0.0)
    save_pitch_file(path, PitchCurve(frame_rate_hz=gen.frame_rate_hz, f0_hz=f0))


def _generate_for_task(
    net: VelocityNet,
    metadata: dict,
    task: tasks.TaskInput,
    cfg: RunConfig,
    null_voicing: bool,
) -> SemitoneCurve:
    u = task.seq.u
    if null_voicing:
        u = np.full(len(task.seq), NULL_UNVOICED_INDEX, dtype=np.int64)
        msg = "no voicing supplied; substituting the learned null embedding for u"
        if metadata.get("phase") == 2:
            msg = "checkpoint was trained with voicing conditioning; " + msg
        print(f"warning: {msg}", file=sys.stderr)
    rng = np.random.default_rng(cfg.seed)
    x_hat = flow.generate(net, task.seq.y, task.seq.x, task.mask.m, u, cfg.sampler, rng)
    return tasks.split_result(x_hat, task, frame_rate_hz=MODEL_FRAME_RATE_HZ)


def _clip_events(events: list[score.NoteEvent], n_frames: int) -> list[score.NoteEvent]:
    """Truncate a score to the first n_frames, dropping notes past the end."""
    out = []
    for ev in events:
        if ev.onset_frame >= n_frames:
            continue
        out.append(
            score.NoteEvent(
                onset_frame=ev.onset_frame,
                offset_frame=min(ev.offset_frame, n_frames),
                pitch_class=ev.pitch_class,
            )
        )
    return out


def _probe_json(probe: metrics.StyleProbe | None) -> dict | None:
    if probe is None:
        return None
    return {
        "rate_hz": probe.vibrato_rate_hz,
        "extent_st": probe.vibrato_extent_st,
        "n_notes": probe.n_notes,
    }


def _mean_or_none(values: list[float | None]) -> float | None:
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    out_dir = _resolve_path(args.out, cfg.paths.out_dir, "output directory", "out_dir")
    examples = synth.gen_dataset(args.n, args.frames, cfg.seed, MODEL_FRAME_RATE_HZ)
    synth.save_dataset(out_dir, examples, cfg.seed)
    print(f"wrote {len(examples)} examples to {out_dir}")
    return 0


def cmd_extract_notes(args: argparse.Namespace, cfg: RunConfig) -> int:
    curve = to_semitone_curve(load_pitch_file(args.pitch_file))
    score_cfg = cfg.score
    if args.no_smoothing:
        score_cfg = dataclasses.replace(
            score_cfg, sigma_time_frames=0.0, sigma_pitch_classes=0.0
        )
    notes, _ = score.extract_score(curve, score_cfg)
    score.save_notes_file(args.out, notes)
    print(f"{len(notes)} notes -> {args.out}")
    return 0


def _read_trace(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    steps = np.asarray([int(r["step"]) for r in rows])
    losses = np.asarray([float(r["loss"]) for r in rows])
    return steps, losses


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    data_dir = _resolve_path(args.data_dir, cfg.paths.data_dir, "dataset directory", "data_dir")
    out_dir = _resolve_path(args.out, cfg.paths.out_dir, "output directory", "out_dir")
    dataset = [ex.seq for ex in synth.load_dataset(data_dir)]
    kwargs = dict(log_interval=args.log_interval, checkpoint_interval=args.checkpoint_interval)
    if args.resume:
        checkpoints = sorted(p for p in out_dir.glob("checkpoint-*") if p.is_dir())
        if not checkpoints:
            raise UsageError(f"--resume: no checkpoint directories under {out_dir}")
        net, _ = flow.resume_training(checkpoints[-1], dataset, cfg.train, out_dir, **kwargs)
    else:
        net = VelocityNet(cfg.model, seed=cfg.seed)
        net, _ = flow.train(net, dataset, cfg.train, out_dir, **kwargs)
    total = cfg.train.phase1_steps + cfg.train.phase2_steps
    if args.plot is not None:
        steps, losses = _read_trace(out_dir / "trace.csv")
        plotting.save_loss_svg(args.plot, steps, losses)
    print(f"trained to step {total}; checkpoints and trace.csv in {out_dir}")
    return 0


def _load_net(args: argparse.Namespace, cfg: RunConfig) -> tuple[VelocityNet, dict]:
    ckpt = _resolve_path(args.checkpoint, cfg.paths.checkpoint, "checkpoint directory", "checkpoint")
    if not ckpt.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {ckpt}")
    return load_checkpoint(ckpt)


def cmd_apc(args: argparse.Namespace, cfg: RunConfig) -> int:
    net, metadata = _load_net(args, cfg)
    curve = _load_model_curve(args.pitch)
    seq_off = _seq_from_curve(curve, None, cfg)
    events_in = score.load_notes_file(args.notes)
    y_in = score.notes_to_frames(events_in, len(curve))
    task = tasks.build_apc(seq_off, y_in, max_len=net.cfg.max_len)
    gen = _generate_for_task(net, metadata, task, cfg, args.no_voicing)
    _save_generated(args.out, gen)
    result = metrics.melody_metrics(gen, _score_curve(y_in, MODEL_FRAME_RATE_HZ))
    report = {
        "task": "apc",
        "frames": len(gen),
        "context_frames": int(task.split_point),
        "rpa": result.rpa,
        "rca": result.rca,
        "oa": result.oa,
        "out": str(args.out),
    }
    print(json.dumps(report))
    if args.plot is not None:
        plotting.save_overlay_svg(args.plot, task.seq, task.mask.m, gen, MODEL_FRAME_RATE_HZ)
    return 0


def _reference_sequence(args: argparse.Namespace, cfg: RunConfig) -> ModelSequence:
    if args.ref_pitch is None:
        if args.ref_notes is not None:
            raise UsageError("--ref-notes makes no sense without --ref-pitch")
        return _empty_sequence()
    ref_curve = _load_model_curve(args.ref_pitch)
    ref_events = score.load_notes_file(args.ref_notes) if args.ref_notes else None
    return _seq_from_curve(ref_curve, ref_events, cfg)


def _transfer_report(
    name: str, task: tasks.TaskInput, gen: SemitoneCurve, events: list[score.NoteEvent], out: str
) -> dict:
    probe = metrics.vibrato_probe(gen, events)
    return {
        "task": name,
        "frames": len(gen),
        "context_frames": int(task.split_point),
        "no_context": task.split_point == 0,
        "vibrato": _probe_json(probe),
        "out": str(out),
    }


def cmd_svs(args: argparse.Namespace, cfg: RunConfig) -> int:
    net, metadata = _load_net(args, cfg)
    events = score.load_notes_file(args.notes)
    if not events:
        raise UsageError(f"{args.notes}: target score has no notes")
    n_frames = args.frames if args.frames is not None else max(ev.offset_frame for ev in events)
    events = _clip_events(events, n_frames)
    if not events:
        raise UsageError(f"--frames {n_frames} leaves no notes to render")
    y_tgt = score.notes_to_frames(events, n_frames)
    # No performance exists for the target, so voicing defaults to the
    # score's rests; --no-voicing withholds it entirely instead.
    u_tgt = (y_tgt == REST_CLASS).astype(np.int64)
    tgt = ModelSequence(x=np.zeros(n_frames), y=y_tgt, u=u_tgt)
    task = tasks.build_transfer(_reference_sequence(args, cfg), tgt, max_len=net.cfg.max_len)
    gen = _generate_for_task(net, metadata, task, cfg, args.no_voicing)
    _save_generated(args.out, gen)
    # The target events index frames from the task's masked block, which
    # is exactly what the generated curve covers.
    print(json.dumps(_transfer_report("svs", task, gen, events, args.out)))
    if args.plot is not None:
        plotting.save_overlay_svg(args.plot, task.seq, task.mask.m, gen, MODEL_FRAME_RATE_HZ)
    return 0


def cmd_svc(args: argparse.Namespace, cfg: RunConfig) -> int:
    net, metadata = _load_net(args, cfg)
    tgt_curve = _load_model_curve(args.tgt_pitch)
    if args.tgt_notes:
        tgt_events = score.load_notes_file(args.tgt_notes)
        y_tgt = score.notes_to_frames(tgt_events, len(tgt_curve))
    else:
        tgt_events, y_tgt = score.extract_score(tgt_curve, cfg.score)
    tgt = ModelSequence(
        x=normalize_pitch(tgt_curve.semitones),
        y=y_tgt,
        u=(~tgt_curve.voiced).astype(np.int64),
    )
    task = tasks.build_transfer(_reference_sequence(args, cfg), tgt, max_len=net.cfg.max_len)
    gen = _generate_for_task(net, metadata, task, cfg, args.no_voicing)
    _save_generated(args.out, gen)
    print(json.dumps(_transfer_report("svc", task, gen, tgt_events, args.out)))
    if args.plot is not None:
        plotting.save_overlay_svg(args.plot, task.seq, task.mask.m, gen, MODEL_FRAME_RATE_HZ)
    return 0


def _dir_ids(directory: Path, suffix: str) -> set[str]:
    return {p.name[: -len(suffix)] for p in directory.glob(f"*{suffix}")}


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    est_dir, ref_dir, notes_dir = Path(args.est_dir), Path(args.ref_dir), Path(args.notes_dir)
    for d in (est_dir, ref_dir, notes_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    ids = {
        "estimates": _dir_ids(est_dir, ".pitch.json"),
        "references": _dir_ids(ref_dir, ".pitch.json"),
        "notes": _dir_ids(notes_dir, ".notes.json"),
    }
    union = set.union(*ids.values())
    if not union:
        raise UsageError("no *.pitch.json / *.notes.json files found in the given directories")
    missing = {name: sorted(union - have) for name, have in ids.items() if union - have}
    if missing:
        detail = "; ".join(f"{name} lack {m}" for name, m in missing.items())
        raise FileNotFoundError(f"file ids differ across directories: {detail}")

    if args.plot_dir is not None:
        Path(args.plot_dir).mkdir(parents=True, exist_ok=True)

    files = []
    for file_id in sorted(union):
        est = to_semitone_curve(load_pitch_file(est_dir / f"{file_id}.pitch.json"))
        ref = to_semitone_curve(load_pitch_file(ref_dir / f"{file_id}.pitch.json"))
        if est.frame_rate_hz != ref.frame_rate_hz:
            est = resample_curve(est, est.frame_rate_hz, ref.frame_rate_hz)
        result = metrics.melody_metrics(est, ref)
        notes = score.load_notes_file(notes_dir / f"{file_id}.notes.json")
        probe_est = metrics.vibrato_probe(est, notes)
        probe_ref = metrics.vibrato_probe(ref, notes)
        distance = (
            metrics.style_distance(probe_est, probe_ref)
            if probe_est is not None and probe_ref is not None
            else None
        )
        files.append(
            {
                "id": file_id,
                "rpa": result.rpa,
                "rca": result.rca,
                "oa": result.oa,
                "vibrato": {
                    "est": _probe_json(probe_est),
                    "ref": _probe_json(probe_ref),
                    "style_distance": distance,
                },
            }
        )
        if args.plot_dir is not None:
            plotting.save_comparison_svg(
                Path(args.plot_dir) / f"{file_id}.svg",
                est,
                ref,
                score.notes_to_frames(notes, len(ref)),
            )

    report = {
        "rpa": _mean_or_none([f["rpa"] for f in files]),
        "rca": _mean_or_none([f["rca"] for f in files]),
        "oa": _mean_or_none([f["oa"] for f in files]),
        "files": files,
    }
    if args.out is not None:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1)
            fh.write("\n")
        summary = {k: report[k] for k in ("rpa", "rca", "oa")} | {"n_files": len(files)}
        print(json.dumps(summary))
    else:
        print(json.dumps(report, indent=1))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI-style run config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )

    parser = _Parser(prog="pitchflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of examples")
    p.add_argument("--frames", type=int, default=256, help="frames per example")
    p.add_argument("--out", help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-notes", parents=[common], help="extract note events from a pitch file")
    p.add_argument("pitch_file", help="input pitch file (.json or .csv)")
    p.add_argument("--out", required=True, help="output notes JSON")
    p.add_argument("--no-smoothing", action="store_true", help="skip the activation blur")
    p.set_defaults(func=cmd_extract_notes)

    p = sub.add_parser("train", parents=[common], help="train the velocity network")
    p.add_argument("data_dir", nargs="?", help="dataset directory from synth")
    p.add_argument("--out", help="run directory for checkpoints and trace.csv")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.add_argument("--log-interval", type=int, default=1, help="trace every N steps")
    p.add_argument("--checkpoint-interval", type=int, default=1000, help="checkpoint every N steps (0 = final only)")
    p.add_argument("--plot", metavar="SVG", help="also render the loss trace")
    p.set_defaults(func=cmd_train)

    def _task_parser(name: str, help_text: str) -> _Parser:
        tp = sub.add_parser(name, parents=[common], help=help_text)
        tp.add_argument("--checkpoint", help="checkpoint directory")
        tp.add_argument("--out", required=True, help="output pitch JSON for the generated frames")
        tp.add_argument("--plot", metavar="SVG", help="render a context/generated overlay")
        tp.add_argument(
            "--no-voicing",
            action="store_true",
            help="withhold voicing conditioning (null-u fallback)",
        )
        return tp

    p = _task_parser("apc", "correct a performance onto a target note track")
    p.add_argument("--pitch", required=True, help="off-key performance pitch file")
    p.add_argument("--notes", required=True, help="target note track JSON")
    p.set_defaults(func=cmd_apc)

    p = _task_parser("svs", "render a note track in a reference performance's style")
    p.add_argument("--notes", required=True, help="target note track JSON")
    p.add_argument(
        "--frames", type=int,
        help="target length (default: last note offset; shorter values truncate the score)",
    )
    p.add_argument("--ref-pitch", help="reference performance pitch file")
    p.add_argument("--ref-notes", help="reference note track (default: extracted)")
    p.set_defaults(func=cmd_svs)

    p = _task_parser("svc", "re-render a performance in a reference's style")
    p.add_argument("--tgt-pitch", required=True, help="performance to re-render")
    p.add_argument("--tgt-notes", help="its note track (default: extracted)")
    p.add_argument("--ref-pitch", help="reference performance pitch file")
    p.add_argument("--ref-notes", help="reference note track (default: extracted)")
    p.set_defaults(func=cmd_svc)

    p = sub.add_parser("eval", parents=[common], help="score estimates against references")
    p.add_argument("est_dir", help="directory of estimated *.pitch.json")
    p.add_argument("ref_dir", help="directory of reference *.pitch.json")
    p.add_argument("notes_dir", help="directory of *.notes.json for the vibrato probes")
    p.add_argument("--out", help="write the full report JSON here (summary to stdout)")
    p.add_argument("--plot-dir", help="render one comparison SVG per file id")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_run_config(args.config, args.set, args.seed)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
