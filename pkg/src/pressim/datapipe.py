"""Sequence files, stream alignment, sliding windows, normalisation and splits.

Sequence file layout (little-endian)::

    b"PSIM"  u16 version=1  u8 kind  u8 reserved=0  u32 frame_count
    f64 timestamps[frame_count]
    payload[frame_count]   POSE17: 17x3 f32 | POSE25: 25x3 f32 | DEFORM: 80x28 u8 |
                           PRESSURE: 80x28 f32   (row-major)
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadRatios, EmptyStream, FormatError, IoFailure, NoOverlap, ShapeMismatch,
                     TooShort)
from .posekit import SubjectProfile

MAGIC = b"PSIM"
VERSION = 1
GRID = (80, 28)
WINDOW_WIDTH = 10
ALIGN_TOLERANCE = 0.075
_HEADER = struct.Struct("<4sHBBI")


class SequenceKind(enum.IntEnum):
    POSE17 = 0
    POSE25 = 1
    DEFORM = 2
    PRESSURE = 3

    @property
    def frame_shape(self):
        return {0: (17, 3), 1: (25, 3), 2: GRID, 3: GRID}[int(self)]

    @property
    def dtype(self):
        return np.dtype("<u1") if self is SequenceKind.DEFORM else np.dtype("<f4")

    @classmethod
    def for_joints(cls, joints: int) -> "SequenceKind":
        return {17: cls.POSE17, 25: cls.POSE25}[joints]


@dataclass(frozen=True, eq=False)
class SequenceFile:
    kind: SequenceKind
    timestamps: np.ndarray  # (F,) float64 seconds
    frames: np.ndarray  # (F, *kind.frame_shape)

    def __len__(self):
        return len(self.timestamps)


def _check_timestamps(ts, where):
    if ts.ndim != 1 or not np.all(np.isfinite(ts)):
        raise FormatError(f"{where}: timestamps must be a finite 1-D sequence")
    bad = np.flatnonzero(np.diff(ts) <= 0)
    if bad.size:
        raise FormatError(f"{where}: timestamps not strictly increasing at index {bad[0] + 1}")


def encode_sequence(kind, timestamps, frames) -> bytes:
    kind = SequenceKind(kind)
    ts = np.asarray(timestamps, dtype=np.float64)
    frames = np.asarray(frames)
    if frames.shape != (len(ts), *kind.frame_shape):
        raise ShapeMismatch(f"{kind.name} frames must be (F, {kind.frame_shape}), "
                            f"got {frames.shape} for {len(ts)} timestamps")
    _check_timestamps(ts, kind.name)
    if kind is SequenceKind.DEFORM:
        if frames.dtype != np.uint8 and (frames.min(initial=0) < 0 or frames.max(initial=0) > 255
                                         or not np.all(frames == np.round(frames))):
            raise ValueError("deformation frames must hold integers in [0, 255]")
    header = _HEADER.pack(MAGIC, VERSION, int(kind), 0, len(ts))
    return header + ts.astype("<f8").tobytes() + frames.astype(kind.dtype).tobytes(order="C")


def write_sequence(path, kind, timestamps, frames) -> None:
    """Write one stream; pose and pressure payloads are stored as float32."""
    data = encode_sequence(kind, timestamps, frames)
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as err:
        raise IoFailure(f"{path}: {err.strerror or err}") from err


def decode_sequence(data: bytes, path="<bytes>") -> SequenceFile:
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind, reserved, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        kind = SequenceKind(kind)
    except ValueError:
        raise FormatError(f"{path}: unknown sequence kind {kind}") from None
    if reserved != 0:
        raise FormatError(f"{path}: reserved byte is {reserved}, expected 0")
    per_frame = int(np.prod(kind.frame_shape)) * kind.dtype.itemsize
    expected = _HEADER.size + 8 * count + per_frame * count
    if len(data) != expected:
        what = "truncated" if len(data) < expected else "has trailing bytes"
        raise FormatError(f"{path}: {what} ({len(data)} bytes, expected {expected})")
    ts = np.frombuffer(data, dtype="<f8", count=count, offset=_HEADER.size).astype(np.float64)
    _check_timestamps(ts, path)
    frames = np.frombuffer(data, dtype=kind.dtype, offset=_HEADER.size + 8 * count)
    frames = frames.reshape(count, *kind.frame_shape)
    native = np.uint8 if kind is SequenceKind.DEFORM else np.float32
    return SequenceFile(kind, ts, frames.astype(native))


def read_sequence(path) -> SequenceFile:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise IoFailure(f"{path}: {err.strerror or err}") from err
    return decode_sequence(data, path)


# -- alignment ---------------------------------------------------------------

def nearest_indices(source_ts, query_ts) -> np.ndarray:
    """Index of the closest source timestamp for every query (ties go to the earlier frame)."""
    source_ts = np.asarray(source_ts, dtype=np.float64)
    query_ts = np.asarray(query_ts, dtype=np.float64)
    right = np.clip(np.searchsorted(source_ts, query_ts), 1, len(source_ts) - 1)
    if len(source_ts) == 1:
        return np.zeros(len(query_ts), dtype=np.int64)
    left = right - 1
    take_right = np.abs(source_ts[right] - query_ts) < np.abs(query_ts - source_ts[left])
    return np.where(take_right, right, left).astype(np.int64)


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    """Frames of the three streams matched at the pressure stream's rate."""

    subject: SubjectProfile | None
    timestamps: np.ndarray  # (K,) pressure timestamps
    pose_index: np.ndarray  # (K,) source index into the pose stream
    deform_index: np.ndarray
    pressure_index: np.ndarray
    poses: np.ndarray  # (K, J, 3) metres
    deformation: np.ndarray  # (K, 80, 28) uint8
    pressure: np.ndarray  # (K, 80, 28) mmHg

    def __len__(self):
        return len(self.timestamps)


def align_streams(poses, deforms, pressures, tolerance: float = ALIGN_TOLERANCE,
                  subject: SubjectProfile | None = None) -> AlignedDataset:
    """Match each pressure frame to its nearest pose and deformation frames.

    Any object with ``timestamps`` and ``frames`` works as a stream
    (``PoseSequence``, ``SequenceFile``). Pressure frames whose nearest pose or
    deformation frame is farther than ``tolerance`` seconds are dropped.
    """
    streams = {"pose": poses, "deformation": deforms, "pressure": pressures}
    for name, s in streams.items():
        if len(s.timestamps) == 0:
            raise EmptyStream(f"{name} stream is empty")
    t = np.asarray(pressures.timestamps, dtype=np.float64)
    pi = nearest_indices(poses.timestamps, t)
    di = nearest_indices(deforms.timestamps, t)
    keep = ((np.abs(np.asarray(poses.timestamps)[pi] - t) <= tolerance)
            & (np.abs(np.asarray(deforms.timestamps)[di] - t) <= tolerance))
    if not keep.any():
        raise NoOverlap(f"no pressure frame lies within {tolerance} s of both other streams")
    ki = np.flatnonzero(keep)
    return AlignedDataset(
        subject, t[ki], pi[ki], di[ki], ki,
        np.asarray(poses.frames)[pi[ki]],
        np.asarray(deforms.frames)[di[ki]],
        np.asarray(pressures.frames)[ki],
    )


# -- windows -----------------------------------------------------------------

@dataclass(frozen=True)
class NormConstants:
    pressure: float = 5000.0  # mmHg, full sensor range
    deformation: float = 255.0
    pose: float = 1.771  # metres, diagonal of the 0.56 x 1.68 m mat


@dataclass(frozen=True, eq=False)
class Window:
    pose_input: np.ndarray  # (10, J, 3)
    deform_input: np.ndarray  # (10, 80, 28)
    target: np.ndarray  # (80, 28)
    timestamp: float = float("nan")


def normalize(window: Window, constants: NormConstants = NormConstants()) -> Window:
    return Window(np.asarray(window.pose_input, dtype=np.float64) / constants.pose,
                  np.asarray(window.deform_input, dtype=np.float64) / constants.deformation,
                  np.asarray(window.target, dtype=np.float64) / constants.pressure,
                  window.timestamp)


def denormalize(window: Window, constants: NormConstants = NormConstants()) -> Window:
    return Window(np.asarray(window.pose_input) * constants.pose,
                  np.asarray(window.deform_input) * constants.deformation,
                  np.asarray(window.target) * constants.pressure,
                  window.timestamp)


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Stride-1 windows over one or more aligned datasets.

    Window ``i`` covers aligned frames ``starts[i] .. starts[i] + width - 1``
    of the concatenated arrays; its target is the pressure of the last one.
    ``groups[i]`` names the source dataset, so windows never straddle two.
    """

    poses: np.ndarray
    deformation: np.ndarray
    pressure: np.ndarray
    timestamps: np.ndarray
    starts: np.ndarray
    groups: np.ndarray
    width: int = WINDOW_WIDTH
    constants: NormConstants = field(default_factory=NormConstants)

    def __len__(self):
        return len(self.starts)

    def _frames(self, idx):
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        return self.starts[idx][:, None] + np.arange(self.width)

    def __getitem__(self, i) -> Window:
        frames = self._frames([i])[0]
        return Window(self.poses[frames], self.deformation[frames],
                      self.pressure[frames[-1]], float(self.timestamps[frames[-1]]))

    @property
    def target_index(self) -> np.ndarray:
        return self.starts + self.width - 1

    def pose_windows(self, idx=None) -> np.ndarray:
        """Normalised ``(n, width, J, 3)`` float32 pose inputs."""
        out = self.poses[self._frames(idx)].astype(np.float32)
        out /= np.float32(self.constants.pose)
        return out

    def deform_windows(self, idx=None) -> np.ndarray:
        """Normalised ``(n, width, 80, 28)`` float32 deformation inputs."""
        out = self.deformation[self._frames(idx)].astype(np.float32)
        out /= np.float32(self.constants.deformation)
        return out

    def targets(self, idx=None) -> np.ndarray:
        """Normalised ``(n, 80, 28)`` float32 targets."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        out = self.pressure[self.target_index[idx]].astype(np.float32)
        out /= np.float32(self.constants.pressure)
        return out

    def target_pressure(self, idx=None) -> np.ndarray:
        """Target frames in mmHg."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        return np.asarray(self.pressure[self.target_index[idx]], dtype=np.float64)


def make_windows(aligned, width: int = WINDOW_WIDTH,
                 constants: NormConstants = NormConstants()) -> WindowedDataset:
    """Windows of ``width`` aligned frames; ``len(aligned) - width`` per dataset."""
    if width < 1:
        raise ValueError(f"width must be positive, got {width}")
    parts = [aligned] if isinstance(aligned, AlignedDataset) else list(aligned)
    if not parts:
        raise TooShort("no aligned datasets given")
    starts, groups, offset = [], [], 0
    for g, part in enumerate(parts):
        if len(part) < width:
            raise TooShort(f"dataset {g} has {len(part)} aligned frames, need >= {width}")
        count = len(part) - width
        starts.append(offset + np.arange(count))
        groups.append(np.full(count, g))
        offset += len(part)
    joints = {p.poses.shape[1] for p in parts}
    if len(joints) != 1:
        raise ShapeMismatch("datasets mix skeletons")
    return WindowedDataset(
        np.concatenate([p.poses for p in parts]),
        np.concatenate([p.deformation for p in parts]),
        np.concatenate([p.pressure for p in parts]),
        np.concatenate([p.timestamps for p in parts]),
        np.concatenate(starts).astype(np.int64),
        np.concatenate(groups).astype(np.int64),
        width, constants)


# -- splits ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Window indices per split.

    ``train``, ``val``, ``test`` and ``guard`` partition all windows.
    ``guard`` holds the windows of each training block that would share an
    aligned frame with a validation or test window; they are used by no
    split. Without the guard gap it is empty.
    """

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    guard: np.ndarray
    seed: int

    def as_dict(self):
        return {"train": self.train, "val": self.val, "test": self.test, "guard": self.guard}


def _block_sizes(n, ratios):
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_val = min(n_val, n)
    n_test = min(n_test, n - n_val)
    return n - n_val - n_test, n_val, n_test


def split(dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0, guard: bool = True) -> DatasetSplit:
    """Contiguous-block train/val/test split, done separately for each window group.

    Within a group of ``n`` windows the order is rotated by a seeded offset
    and cut into train, val and test blocks of ``round``-ed sizes. With
    ``guard`` set, training windows closer than ``width`` windows to a
    validation or test window of the same group move to ``guard``.
    """
    r = tuple(float(x) for x in ratios)
    if len(r) != 3 or min(r) <= 0 or abs(sum(r) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if isinstance(dataset, WindowedDataset):
        groups, width = dataset.groups, dataset.width
    else:
        groups, width = np.zeros(int(dataset), dtype=np.int64), WINDOW_WIDTH
    out = {"train": [], "val": [], "test": [], "guard": []}
    for g in np.unique(groups):
        members = np.flatnonzero(groups == g)
        n = len(members)
        offset = int(np.random.default_rng([seed, int(g)]).integers(n))
        order = np.roll(np.arange(n), -offset)
        n_train, n_val, _ = _block_sizes(n, r)
        tr, va, te = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
        if guard and len(tr):
            held = np.sort(np.concatenate([va, te]))
            if len(held):
                pos = np.searchsorted(held, tr)
                lo = held[np.clip(pos - 1, 0, len(held) - 1)]
                hi = held[np.clip(pos, 0, len(held) - 1)]
                near = np.minimum(np.abs(tr - lo), np.abs(hi - tr)) < width
                out["guard"].append(members[np.sort(tr[near])])
                tr = tr[~near]
        out["train"].append(members[np.sort(tr)])
        out["val"].append(members[np.sort(va)])
        out["test"].append(members[np.sort(te)])
    cat = {k: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64)).astype(np.int64)
           for k, v in out.items()}
    return DatasetSplit(cat["train"], cat["val"], cat["test"], cat["guard"], seed)
