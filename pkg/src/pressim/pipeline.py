"""End-to-end orchestration: synthetic recordings, the three-network stack, synthesis.

A *recording* is one subject performing one motion template: a pose stream
at the capture rate, the simulated deformation profile of every pose frame,
and a reference pressure stream sampled at the (slower, jittered) mat rate.
Recordings are aligned at the pressure rate and cut into windows; the stack
is then trained in two stages (pose and deformation networks independently,
then the synthesis network on their frozen outputs).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evalkit
from .datapipe import (DatasetSplit, SequenceFile, SequenceKind, WindowedDataset, align_streams,
                       make_windows, split)
from .deformsim import PRESSURE_MAX_MMHG, PlaneModel, simulate_sequence
from .nn import Hyperparams, Network, NetworkKind, TrainHistory, TrainingSet, build_model, train
from .nn.checkpoint import encode, save_checkpoint
from .posekit import (PAPER_SUBJECTS, MotionSpec, MotionTemplate, PoseSequence, SkeletonKind,
                      SubjectProfile, build_skeleton, generate_motion)

STACK = (NetworkKind.TPN, NetworkKind.TDN, NetworkKind.PSN)


@dataclass(frozen=True, eq=False)
class Recording:
    subject: SubjectProfile
    template: MotionTemplate
    poses: PoseSequence
    deformation: SequenceFile  # one frame per pose frame
    pressure: SequenceFile  # reference pressure at the mat rate

    def pose_file(self) -> SequenceFile:
        return SequenceFile(SequenceKind.for_joints(self.poses.skeleton.num_joints),
                            self.poses.timestamps, self.poses.frames.astype(np.float32))


def pressure_stream(deform_ts, pressure, step: int, jitter: float,
                    rng: np.random.Generator) -> SequenceFile:
    """Every ``step``-th simulated pressure frame, timestamps jittered uniformly.

    The jitter models the mat's clock; it must stay below half the
    pressure period so timestamps remain strictly increasing.
    """
    idx = np.arange(0, len(deform_ts), step)
    ts = np.asarray(deform_ts, dtype=np.float64)[idx]
    if jitter > 0:
        ts = ts + rng.uniform(-jitter, jitter, size=len(ts))
    return SequenceFile(SequenceKind.PRESSURE, ts,
                        np.asarray(pressure)[idx].astype(np.float32))


def record(subject: SubjectProfile, template, duration: float, seed: int,
           pose_fps: float = 30.0, pressure_fps: float = 10.0, jitter: float = 0.004,
           noise: float = 0.005, skeleton=SkeletonKind.COCO17,
           plane: PlaneModel = PlaneModel()) -> Recording:
    """Generate motion, simulate it and sample the reference pressure stream."""
    sk = build_skeleton(skeleton)
    spec = MotionSpec(MotionTemplate(template), duration, pose_fps, noise, seed)
    poses = generate_motion(spec, sk, subject)
    sim = simulate_sequence(poses, subject, plane)
    step = max(1, int(round(pose_fps / pressure_fps)))
    rng = np.random.default_rng([seed, 0x70])
    return Recording(subject, spec.template, poses,
                     SequenceFile(SequenceKind.DEFORM, sim.timestamps, sim.deformation),
                     pressure_stream(sim.timestamps, sim.pressure, step, jitter, rng))


def window_dataset(recordings, tolerance: float = 0.075, width: int = 10) -> WindowedDataset:
    aligned = [align_streams(r.poses, r.deformation, r.pressure, tolerance, r.subject)
               for r in recordings]
    return make_windows(aligned, width)


# -- models ------------------------------------------------------------------

@dataclass
class Models:
    tpn: Network | None = None
    tdn: Network | None = None
    psn: Network | None = None
    baseline: Network | None = None

    def get(self, kind) -> Network | None:
        return getattr(self, NetworkKind.parse(kind).name.lower())

    def set(self, net: Network) -> None:
        setattr(self, net.kind.name.lower(), net)

    def items(self):
        for kind in NetworkKind:
            net = self.get(kind)
            if net is not None:
                yield kind, net


def checkpoint_name(kind) -> str:
    return f"{NetworkKind.parse(kind).name.lower()}.ckpt"


def stack_inputs(models: Models, pose_windows, deform_windows) -> tuple[np.ndarray, np.ndarray]:
    """Frozen pose- and deformation-network outputs, the synthesis network's inputs."""
    return models.tpn.predict(pose_windows), models.tdn.predict(deform_windows)


def to_mmhg(normalised) -> np.ndarray:
    """Network output (normalised) to pressure in mmHg, clipped to the sensor range."""
    return np.clip(np.asarray(normalised, dtype=np.float64) * PRESSURE_MAX_MMHG,
                   0.0, PRESSURE_MAX_MMHG)


def synthesize(models: Models, pose_windows, deform_windows) -> np.ndarray:
    """Full-stack pressure maps in mmHg."""
    p, q = stack_inputs(models, pose_windows, deform_windows)
    return to_mmhg(models.psn.predict((p, q)))


def synthesize_baseline(models: Models, pose_windows) -> np.ndarray:
    return to_mmhg(models.baseline.predict(pose_windows))


@dataclass(frozen=True)
class Schedule:
    """Training settings shared by every network, plus per-network epoch counts."""

    hyper: Hyperparams = Hyperparams()
    epochs: dict = field(default_factory=dict)  # NetworkKind -> epochs

    def for_kind(self, kind) -> Hyperparams:
        kind = NetworkKind.parse(kind)
        return replace(self.hyper, epochs=self.epochs.get(kind, self.hyper.epochs),
                       seed=self.hyper.seed + int(kind))


def _subset(ds: WindowedDataset, kind: NetworkKind, idx, stack_outputs=None) -> TrainingSet:
    y = ds.targets(idx)
    if kind is NetworkKind.TDN:
        return TrainingSet(ds.deform_windows(idx), y)
    if kind is NetworkKind.PSN:
        p, q = stack_outputs
        return TrainingSet((p, q), y, aux=q)
    return TrainingSet(ds.pose_windows(idx), y)


def train_models(ds: WindowedDataset, parts: DatasetSplit, schedule: Schedule,
                 kinds=(*STACK, NetworkKind.BASELINE), seed: int = 0, models: Models | None = None,
                 log=None, dtype=np.float32) -> tuple[Models, dict]:
    """Train the requested networks; the synthesis network trains on frozen stack outputs.

    Networks already present in ``models`` continue from their stored epoch.
    Returns the models and a ``NetworkKind -> TrainHistory`` mapping.
    """
    models = models or Models()
    kinds = [NetworkKind.parse(k) for k in kinds]
    order = [k for k in (NetworkKind.TPN, NetworkKind.TDN, NetworkKind.BASELINE, NetworkKind.PSN)
             if k in kinds]
    histories: dict[NetworkKind, TrainHistory] = {}
    joints = ds.poses.shape[1]
    for kind in order:
        net = models.get(kind) or build_model(kind, seed + int(kind), joints=joints,
                                                  dtype=dtype)
        if kind is NetworkKind.PSN:
            if models.tpn is None or models.tdn is None:
                raise ValueError("the synthesis network needs trained TPN and TDN models")
            tr = stack_inputs(models, ds.pose_windows(parts.train), ds.deform_windows(parts.train))
            va = stack_inputs(models, ds.pose_windows(parts.val), ds.deform_windows(parts.val))
            data, val = _subset(ds, kind, parts.train, tr), _subset(ds, kind, parts.val, va)
        else:
            data, val = _subset(ds, kind, parts.train), _subset(ds, kind, parts.val)
        net, histories[kind] = train(net, data, schedule.for_kind(kind),
                                     validation=val if len(val) else None, log=log)
        models.set(net)
    return models, histories


def save_models(models: Models, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind, net in models.items():
        path = directory / checkpoint_name(kind)
        save_checkpoint(net, path)
        paths.append(path)
    return paths


# -- benchmark ---------------------------------------------------------------

BENCHMARK_SUBJECTS = (PAPER_SUBJECTS[3], PAPER_SUBJECTS[0], PAPER_SUBJECTS[5])  # 94.7, 74.3, 57.7 kg
BENCHMARK_TEMPLATES = (MotionTemplate.STAND_SWAY, MotionTemplate.SQUAT_CYCLE,
                       MotionTemplate.PLANK, MotionTemplate.SUPINE)


@dataclass(frozen=True)
class BenchmarkConfig:
    subjects: tuple = BENCHMARK_SUBJECTS
    templates: tuple = BENCHMARK_TEMPLATES
    duration: float = 45.0
    pose_fps: float = 30.0
    pressure_fps: float = 10.0
    jitter: float = 0.004
    noise: float = 0.005
    ratios: tuple = (0.8, 0.1, 0.1)
    epochs: int = 5
    learning_rate: float = 1e-4
    batch_size: int = 128
    seed: int = 0
    plane: PlaneModel = PlaneModel()


@dataclass(frozen=True, eq=False)
class BenchmarkResult:
    report: evalkit.MetricReport
    dataset: WindowedDataset
    split: DatasetSplit
    models: Models
    histories: dict
    checkpoints: dict  # NetworkKind -> encoded checkpoint bytes
    seconds: dict  # stage -> wall time

    @property
    def aligned_frames(self) -> int:
        return len(self.dataset.poses)


def benchmark_recordings(cfg: BenchmarkConfig) -> list[Recording]:
    recs = []
    for s, subject in enumerate(cfg.subjects):
        for t, template in enumerate(cfg.templates):
            recs.append(record(subject, template, cfg.duration, cfg.seed * 1000 + 10 * s + t,
                               cfg.pose_fps, cfg.pressure_fps, cfg.jitter, cfg.noise,
                               plane=cfg.plane))
    return recs


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(), out_dir=None,
                  log=None) -> BenchmarkResult:
    """Generate data, train the baseline and the full stack with identical budgets, score both.

    Every network gets the same learning rate, batch size and epoch count;
    the report covers the held-out test split. With ``out_dir`` the
    checkpoints and the report (text and CSV) are written there.
    """
    seconds = {}
    t0 = time.perf_counter()
    recs = benchmark_recordings(cfg)
    ds = window_dataset(recs)
    parts = split(ds, cfg.ratios, seed=cfg.seed)
    seconds["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    schedule = Schedule(Hyperparams(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                                    epochs=cfg.epochs, seed=cfg.seed))
    models, histories = train_models(ds, parts, schedule, seed=cfg.seed, log=log)
    seconds["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    test = parts.test
    gt = ds.target_pressure(test)
    poses, deforms = ds.pose_windows(test), ds.deform_windows(test)
    rep = evalkit.report([("baseline", synthesize_baseline(models, poses)),
                          ("pressim", synthesize(models, poses, deforms))],
                         gt, dataset=f"synthetic benchmark, seed {cfg.seed}, test split")
    seconds["eval"] = time.perf_counter() - t0
    ckpts = {kind: encode(net) for kind, net in models.items()}
    if out_dir is not None:
        out = Path(out_dir)
        save_models(models, out)
        (out / "report.csv").write_text(rep.to_csv())
        (out / "report.txt").write_text(rep.to_text())
        for kind, h in histories.items():
            (out / f"history_{kind.name.lower()}.csv").write_text(h.to_csv())
    return BenchmarkResult(rep, ds, parts, models, histories, ckpts, seconds)
