"""``pressim`` command line: gen, simulate, train, synth, eval, report, selftest.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, deformsim, evalkit, pipeline
from .config import ConfigError, coerce, load_config, render_defaults
from .datapipe import (SequenceFile, SequenceKind, align_streams, make_windows, nearest_indices,
                       read_sequence, split, write_sequence)
from .errors import DivergenceDetected, IoFailure, NonConvergence, PressimError
from .nn import Hyperparams, NetworkKind, load_checkpoint
from .posekit import (MotionSpec, MotionTemplate, PoseSequence, SubjectProfile, build_skeleton,
                      generate_motion, validate_pose_sequence)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config 'seed')")
    p.add_argument("--precision", choices=("f32", "f64"), help="network arithmetic precision")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pressim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pressim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic pose sequence file")
    _common(p)
    p.add_argument("--template", choices=[t.value for t in MotionTemplate])
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--fps", type=float, help="pose frames per second")
    p.add_argument("--noise", type=float, help="noise amplitude in metres")
    p.add_argument("--skeleton", choices=("coco17", "body25"))
    p.add_argument("--mass", type=float, help="subject mass in kg")
    p.add_argument("--height", type=float, help="subject height in cm")
    p.add_argument("--out", required=True, metavar="PATH", help="output pose file")

    p = sub.add_parser("simulate", help="simulate deformation and reference pressure")
    _common(p)
    p.add_argument("--poses", required=True, metavar="PATH")
    p.add_argument("--mass", type=float, help="subject mass in kg")
    p.add_argument("--height", type=float, help="subject height in cm")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="writes deform.psim and pressure.psim here")
    p.add_argument("--pgm", metavar="DIR", help="also dump every deformation frame as PGM")

    p = sub.add_parser("train", help="train TPN, TDN, PSN and BASELINE checkpoints")
    _common(p)
    p.add_argument("--data", nargs=3, action="append", required=True,
                   metavar=("POSES", "DEFORM", "PRESSURE"),
                   help="one recording's files; repeat for more recordings")
    p.add_argument("--models", default="tpn,tdn,psn,baseline",
                   help="comma-separated networks to train")
    p.add_argument("--lr", type=float, help="learning rate (overrides train.lr)")
    p.add_argument("--epochs", type=int, help="epochs per network (overrides train.epochs)")
    p.add_argument("--batch-size", type=int, help="overrides train.batch_size")
    p.add_argument("--out", required=True, metavar="DIR", help="checkpoint directory")

    p = sub.add_parser("synth", help="synthesise pressure maps from pose and deformation")
    _common(p)
    p.add_argument("--poses", required=True, metavar="PATH")
    p.add_argument("--deform", required=True, metavar="PATH")
    p.add_argument("--checkpoints", required=True, metavar="DIR")
    p.add_argument("--model", choices=("pressim", "baseline"), default="pressim")
    p.add_argument("--reference", metavar="PATH",
                   help="pressure file whose timestamps define the output frames "
                        "(default: a regular grid at pressure.fps)")
    p.add_argument("--out", required=True, metavar="PATH", help="output pressure file")

    for name, text in (("eval", "score synthesised pressure files against ground truth"),
                       ("report", "same as eval; also prints the CSV")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--truth", required=True, metavar="PATH", help="ground-truth pressure file")
        p.add_argument("--pred", action="append", required=True, metavar="NAME=PATH",
                       help="a model's synthesised pressure file; repeat per model")
        p.add_argument("--out", metavar="DIR", help="write report.txt and report.csv here")

    p = sub.add_parser("selftest", help="gradient, metric-oracle and force-balance checks")
    _common(p)
    p.add_argument("--out", metavar="PATH", help="also write the log here")

    p = sub.add_parser("config", help="print every config key with its default")
    return parser


# -- helpers -----------------------------------------------------------------

def _config(args, **overrides):
    over = {"seed": getattr(args, "seed", None), "precision": getattr(args, "precision", None)}
    over.update(overrides)
    for key, value in over.items():  # a bad flag value is a usage error, not a data error
        if value is not None:
            try:
                coerce(key, value)
            except ConfigError as err:
                raise UsageError(f"flag for {err}") from None
    return load_config(getattr(args, "config", None), over)


def _subject(cfg) -> SubjectProfile:
    return SubjectProfile(cfg["subject.id"], cfg["subject.mass"], cfg["subject.height"],
                          cfg["subject.gender"])


def _plane(cfg) -> deformsim.PlaneModel:
    return deformsim.PlaneModel(stiffness_k=cfg["plane.k"], d_max_mm=cfg["plane.d_max"])


def _dtype(cfg):
    return np.float64 if cfg["precision"] == "f64" else np.float32


def _read_poses(path) -> PoseSequence:
    f = read_sequence(path)
    if f.kind not in (SequenceKind.POSE17, SequenceKind.POSE25):
        raise PressimError(f"{path}: holds {f.kind.name} frames, expected a pose sequence")
    skeleton = build_skeleton("coco17" if f.kind is SequenceKind.POSE17 else "body25")
    return PoseSequence(skeleton, f.frames.astype(np.float64), f.timestamps)


def _read_kind(path, kind) -> SequenceFile:
    f = read_sequence(path)
    if f.kind is not kind:
        raise PressimError(f"{path}: holds {f.kind.name} frames, expected {kind.name}")
    return f


def _load_models(directory, kinds, dtype) -> pipeline.Models:
    models = pipeline.Models()
    for kind in kinds:
        path = Path(directory) / pipeline.checkpoint_name(kind)
        models.set(load_checkpoint(path, expected_kind=kind).astype(dtype))
    return models


# -- subcommands -------------------------------------------------------------

def cmd_gen(args, out):
    cfg = _config(args, **{"motion.template": args.template, "motion.duration": args.duration,
                           "motion.fps": args.fps, "motion.noise": args.noise,
                           "skeleton.kind": args.skeleton, "subject.mass": args.mass,
                           "subject.height": args.height})
    spec = MotionSpec(cfg["motion.template"], cfg["motion.duration"], cfg["motion.fps"],
                      cfg["motion.noise"], cfg["seed"])
    seq = generate_motion(spec, build_skeleton(cfg["skeleton.kind"]), _subject(cfg))
    kind = SequenceKind.for_joints(seq.skeleton.num_joints)
    write_sequence(args.out, kind, seq.timestamps, seq.frames.astype(np.float32))
    print(f"wrote {len(seq)} {kind.name} frames to {args.out}", file=out)


def cmd_simulate(args, out):
    cfg = _config(args, **{"subject.mass": args.mass, "subject.height": args.height})
    poses = _read_poses(args.poses)
    report = validate_pose_sequence(poses)
    if not report.ok:
        raise PressimError(f"{args.poses}: {len(report.violations)} pose violations, first: "
                           f"{report.violations[0]}")
    plane = _plane(cfg)
    sim = deformsim.simulate_sequence(poses, _subject(cfg), plane)
    fps = len(poses) / max(poses.timestamps[-1] - poses.timestamps[0], 1e-9) \
        if len(poses) > 1 else cfg["pressure.fps"]
    step = max(1, int(round(fps / cfg["pressure.fps"])))
    stream = pipeline.pressure_stream(sim.timestamps, sim.pressure, step, cfg["pressure.jitter"],
                                      np.random.default_rng([cfg["seed"], 0x70]))
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    write_sequence(d / "deform.psim", SequenceKind.DEFORM, sim.timestamps, sim.deformation)
    write_sequence(d / "pressure.psim", SequenceKind.PRESSURE, stream.timestamps, stream.frames)
    if args.pgm:
        pgm = Path(args.pgm)
        pgm.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(sim.deformation):
            deformsim.write_pgm(pgm / f"deform_{i:05d}.pgm", frame)
    print(f"simulated {len(sim)} frames ({int(sim.no_contact.sum())} without contact); "
          f"{len(stream)} pressure frames -> {d}", file=out)


def cmd_train(args, out):
    cfg = _config(args, **{"train.lr": args.lr, "train.epochs": args.epochs,
                           "train.batch_size": args.batch_size})
    try:
        kinds = [NetworkKind.parse(k.strip()) for k in args.models.split(",") if k.strip()]
    except (KeyError, ValueError) as err:
        raise UsageError(f"--models: {err}") from None
    aligned = []
    for poses, deform, pressure in args.data:
        aligned.append(align_streams(_read_poses(poses), _read_kind(deform, SequenceKind.DEFORM),
                                     _read_kind(pressure, SequenceKind.PRESSURE),
                                     cfg["align.tolerance"]))
    ds = make_windows(aligned, cfg["window.width"])
    parts = split(ds, cfg["split.ratios"], seed=cfg["seed"], guard=cfg["split.guard"])
    epochs = {k: cfg[f"train.epochs_{k.name.lower()}"] for k in NetworkKind
              if cfg[f"train.epochs_{k.name.lower()}"] > 0}
    hyper = Hyperparams(learning_rate=cfg["train.lr"], batch_size=cfg["train.batch_size"],
                        epochs=cfg["train.epochs"], loss_mode=cfg["train.loss_mode"],
                        fusion_weights=(cfg["train.alpha"], cfg["train.beta"]), seed=cfg["seed"])
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    models = pipeline.Models()
    for kind in kinds:  # resume from checkpoints already in the directory
        path = d / pipeline.checkpoint_name(kind)
        if path.exists():
            models.set(load_checkpoint(path, expected_kind=kind))
    if NetworkKind.PSN in kinds:
        for kind in (NetworkKind.TPN, NetworkKind.TDN):
            if kind not in kinds and models.get(kind) is None:
                models.set(load_checkpoint(d / pipeline.checkpoint_name(kind), kind))
    for _, net in models.items():
        net.astype(_dtype(cfg))
    print(f"{len(ds)} windows: {len(parts.train)} train, {len(parts.val)} val, "
          f"{len(parts.test)} test, {len(parts.guard)} guard", file=out)

    def log(net, history):
        print(f"  {net.kind.name:<8} epoch {net.epoch:>4}  loss {history.train_loss[-1]:.6g}"
              + (f"  val_mse {history.val_mse[-1]:.6g}" if history.val_mse else ""), file=out)

    models, histories = pipeline.train_models(
        ds, parts, pipeline.Schedule(hyper, epochs), kinds=kinds, seed=cfg["seed"],
        models=models, log=log, dtype=_dtype(cfg))
    pipeline.save_models(models, d)
    for kind, h in histories.items():
        (d / f"history_{kind.name.lower()}.csv").write_text(h.to_csv())
    np.savez(d / "split.npz", **parts.as_dict())
    print(f"checkpoints -> {d}", file=out)


def cmd_synth(args, out):
    cfg = _config(args)
    poses = _read_poses(args.poses)
    deform = _read_kind(args.deform, SequenceKind.DEFORM)
    if args.reference:
        ref = read_sequence(args.reference)
        ts = ref.timestamps
    else:
        t0, t1 = float(poses.timestamps[0]), float(poses.timestamps[-1])
        ts = t0 + np.arange(int(np.floor((t1 - t0) * cfg["pressure.fps"])) + 1) / cfg["pressure.fps"]
    query = SequenceFile(SequenceKind.PRESSURE, ts, np.zeros((len(ts), 80, 28), np.float32))
    ds = make_windows(align_streams(poses, deform, query, cfg["align.tolerance"]),
                      cfg["window.width"])
    kinds = (NetworkKind.BASELINE,) if args.model == "baseline" else pipeline.STACK
    models = _load_models(args.checkpoints, kinds, _dtype(cfg))
    if args.model == "baseline":
        pred = pipeline.synthesize_baseline(models, ds.pose_windows())
    else:
        pred = pipeline.synthesize(models, ds.pose_windows(), ds.deform_windows())
    write_sequence(args.out, SequenceKind.PRESSURE, ds.timestamps[ds.target_index],
                   pred.astype(np.float32))
    print(f"wrote {len(pred)} synthesised frames ({args.model}) to {args.out}", file=out)


def _matched(pred: SequenceFile, truth: SequenceFile, tolerance: float, path) -> tuple:
    """Ground-truth frames nearest to each prediction timestamp."""
    idx = nearest_indices(truth.timestamps, pred.timestamps)
    far = np.abs(truth.timestamps[idx] - pred.timestamps) > tolerance
    if far.any():
        raise PressimError(f"{path}: {int(far.sum())} frames have no ground-truth frame within "
                           f"{tolerance} s")
    return pred.frames, truth.frames[idx]


def cmd_eval(args, out):
    cfg = _config(args)
    named = []
    for item in args.pred:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--pred expects NAME=PATH, got {item!r}")
        named.append((name, path))
    truth = _read_kind(args.truth, SequenceKind.PRESSURE)
    models, gt = [], None
    for name, path in named:
        pred = _read_kind(path, SequenceKind.PRESSURE)
        p, g = _matched(pred, truth, cfg["align.tolerance"], path)
        if gt is not None and (g.shape != gt.shape or not np.array_equal(g, gt)):
            raise PressimError(f"{path}: covers different frames than the first prediction")
        gt = g
        models.append((name, p))
    rep = evalkit.report(models, gt, dataset=str(args.truth))
    print(rep.to_text(), end="", file=out)
    if args.command == "report":
        print(rep.to_csv(), end="", file=out)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(rep.to_text())
        (d / "report.csv").write_text(rep.to_csv())


def cmd_selftest(args, out):
    from .selftest import run_selftest
    lines = []

    def emit(line):
        print(line, file=out)
        lines.append(line)

    ok = run_selftest(emit, seed=_config(args)["seed"])
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    if not ok:
        raise SelfTestFailed("selftest failed")


class SelfTestFailed(PressimError, ArithmeticError):
    pass


COMMANDS = {"gen": cmd_gen, "simulate": cmd_simulate, "train": cmd_train, "synth": cmd_synth,
            "eval": cmd_eval, "report": cmd_eval, "selftest": cmd_selftest}


def _threads():
    raw = os.environ.get("PRESSIM_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PRESSIM_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError(f"PRESSIM_THREADS must be >= 0, got {n}")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("pressim: a subcommand is required (gen, simulate, train, synth, "
                             "eval, report, selftest)")
        if args.command == "config":
            print(render_defaults(), end="", file=out)
            return EXIT_OK
        with _threads():
            COMMANDS[args.command](args, out)
        return EXIT_OK
    except UsageError as e:
        print(f"error: {e}", file=err)
        return EXIT_USAGE
    except (NonConvergence, DivergenceDetected, FloatingPointError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=err)
        return EXIT_NUMERIC
    except (PressimError, ConfigError, OSError, ValueError) as e:
        if isinstance(e, OSError) and not isinstance(e, IoFailure):
            name = getattr(e, "filename", None)
            e = f"{name}: {e.strerror}" if name else e
        print(f"error: {e}", file=err)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
