"""Skeletons, subjects, capsule body geometry and synthetic motion.

World frame: right-handed, Z up, the sensor mat lies in the plane Z = 0 and
spans X in [0, 0.56] m (28 columns) and Y in [0, 1.68] m (80 rows).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

from .errors import DimensionMismatch, InvalidSpec, InvalidSubject

REFERENCE_HEIGHT_CM = 175.0
MAT_CENTER = (0.28, 0.84)

# Capsule radius per bone kind, millimetres at the reference height.
DEFAULT_RADII_MM = {
    "head": 90.0,
    "torso": 140.0,
    "upper_arm": 45.0,
    "forearm": 40.0,
    "thigh": 75.0,
    "shin": 55.0,
    "foot": 40.0,
    "hand": 35.0,
}


class SkeletonKind(enum.Enum):
    COCO17 = "coco17"
    BODY25 = "body25"


class MotionTemplate(enum.Enum):
    STAND_SWAY = "stand_sway"
    SQUAT_CYCLE = "squat_cycle"
    PLANK = "plank"
    BRIDGE = "bridge"
    SUPINE = "supine"
    SIT_TO_STAND = "sit_to_stand"


@dataclass(frozen=True)
class SubjectProfile:
    """Body parameters of one participant (mass in kg, height in cm)."""

    id: str
    mass: float
    height: float
    gender: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.mass) and 20.0 <= self.mass <= 250.0):
            raise InvalidSubject(f"mass {self.mass!r} kg outside [20, 250]")
        if not (math.isfinite(self.height) and 100.0 <= self.height <= 230.0):
            raise InvalidSubject(f"height {self.height!r} cm outside [100, 230]")

    @property
    def scale(self) -> float:
        return self.height / REFERENCE_HEIGHT_CM


# Participants of the recorded yoga dataset (mass kg, height cm).
PAPER_SUBJECTS = (
    SubjectProfile("1", 74.3, 178.0, "male"),
    SubjectProfile("2", 76.3, 183.0, "male"),
    SubjectProfile("3", 72.2, 178.0, "male"),
    SubjectProfile("4", 94.7, 172.0, "male"),
    SubjectProfile("5", 60.2, 157.5, "female"),
    SubjectProfile("6", 57.7, 162.0, "female"),
    SubjectProfile("7", 57.2, 160.0, "female"),
    SubjectProfile("8", 52.3, 162.0, "male"),
    SubjectProfile("9", 57.3, 159.0, "female"),
)


_COCO17_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
# (child, parent, bone kind); rooted at left_hip.
_COCO17_BONES = (
    ("right_hip", "left_hip", "torso"),
    ("left_knee", "left_hip", "thigh"),
    ("left_ankle", "left_knee", "shin"),
    ("right_knee", "right_hip", "thigh"),
    ("right_ankle", "right_knee", "shin"),
    ("left_shoulder", "left_hip", "torso"),
    ("right_shoulder", "right_hip", "torso"),
    ("left_elbow", "left_shoulder", "upper_arm"),
    ("left_wrist", "left_elbow", "forearm"),
    ("right_elbow", "right_shoulder", "upper_arm"),
    ("right_wrist", "right_elbow", "forearm"),
    ("nose", "left_shoulder", "head"),
    ("left_eye", "nose", "head"),
    ("right_eye", "nose", "head"),
    ("left_ear", "left_eye", "head"),
    ("right_ear", "right_eye", "head"),
)

_BODY25_JOINTS = (
    "nose", "neck", "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist", "mid_hip",
    "right_hip", "right_knee", "right_ankle", "left_hip", "left_knee",
    "left_ankle", "right_eye", "left_eye", "right_ear", "left_ear",
    "left_big_toe", "left_small_toe", "left_heel",
    "right_big_toe", "right_small_toe", "right_heel",
)
# Rooted at mid_hip.
_BODY25_BONES = (
    ("neck", "mid_hip", "torso"),
    ("right_shoulder", "neck", "torso"),
    ("left_shoulder", "neck", "torso"),
    ("right_hip", "mid_hip", "torso"),
    ("left_hip", "mid_hip", "torso"),
    ("right_elbow", "right_shoulder", "upper_arm"),
    ("right_wrist", "right_elbow", "forearm"),
    ("left_elbow", "left_shoulder", "upper_arm"),
    ("left_wrist", "left_elbow", "forearm"),
    ("right_knee", "right_hip", "thigh"),
    ("right_ankle", "right_knee", "shin"),
    ("left_knee", "left_hip", "thigh"),
    ("left_ankle", "left_knee", "shin"),
    ("nose", "neck", "head"),
    ("right_eye", "nose", "head"),
    ("left_eye", "nose", "head"),
    ("right_ear", "right_eye", "head"),
    ("left_ear", "left_eye", "head"),
    ("left_big_toe", "left_ankle", "foot"),
    ("left_small_toe", "left_big_toe", "foot"),
    ("left_heel", "left_ankle", "foot"),
    ("right_big_toe", "right_ankle", "foot"),
    ("right_small_toe", "right_big_toe", "foot"),
    ("right_heel", "right_ankle", "foot"),
)


@dataclass(frozen=True)
class Skeleton:
    """Fixed joint topology with one capsule radius (mm) per bone."""

    kind: SkeletonKind
    joint_names: tuple[str, ...]
    parent_edges: tuple[tuple[int, int], ...]
    capsule_radii: tuple[float, ...]
    bone_kinds: tuple[str, ...]

    def __post_init__(self):
        j = len(self.joint_names)
        expected = {SkeletonKind.COCO17: 17, SkeletonKind.BODY25: 25}[self.kind]
        if j != expected:
            raise DimensionMismatch(f"{self.kind.name} needs {expected} joints, got {j}")
        if len(self.parent_edges) != j - 1:
            raise ValueError("a skeleton tree needs exactly J-1 bones")
        if not (len(self.capsule_radii) == len(self.bone_kinds) == j - 1):
            raise ValueError("one radius and one kind per bone")
        if any(not r > 0 for r in self.capsule_radii):
            raise ValueError("capsule radii must be positive")
        _topological_order(j, self.parent_edges)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        children = {c for c, _ in self.parent_edges}
        return next(i for i in range(self.num_joints) if i not in children)

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def bone_lengths(self, joints: np.ndarray) -> np.ndarray:
        """Bone lengths of one (J, 3) frame or a (F, J, 3) stack."""
        joints = np.asarray(joints)
        child, parent = np.array(self.parent_edges).T
        return np.linalg.norm(joints[..., child, :] - joints[..., parent, :], axis=-1)

    def joint_radii_mm(self) -> np.ndarray:
        """Largest radius among the capsules touching each joint."""
        out = np.zeros(self.num_joints)
        for (c, p), r in zip(self.parent_edges, self.capsule_radii):
            out[c] = max(out[c], r)
            out[p] = max(out[p], r)
        return out


def _topological_order(num_joints, edges):
    """Bones ordered parent-before-child; raises on cycles or forests."""
    parent_of = {}
    for c, p in edges:
        if c in parent_of:
            raise ValueError(f"joint {c} has two parents")
        parent_of[c] = p
    roots = [i for i in range(num_joints) if i not in parent_of]
    if len(roots) != 1:
        raise ValueError(f"skeleton must have a single root, found {roots}")
    depth = {roots[0]: 0}

    def resolve(i, seen=()):
        if i in depth:
            return depth[i]
        if i in seen:
            raise ValueError("parent_edges contain a cycle")
        depth[i] = resolve(parent_of[i], seen + (i,)) + 1
        return depth[i]

    for i in range(num_joints):
        resolve(i)
    return sorted(range(len(edges)), key=lambda b: depth[edges[b][0]])


def build_skeleton(kind: SkeletonKind | str, radius_table: dict[str, float] | None = None) -> Skeleton:
    kind = SkeletonKind(kind) if not isinstance(kind, SkeletonKind) else kind
    table = dict(DEFAULT_RADII_MM)
    if radius_table:
        unknown = set(radius_table) - set(table)
        if unknown:
            raise KeyError(f"unknown bone kinds {sorted(unknown)}")
        table.update(radius_table)
    names, bones = {
        SkeletonKind.COCO17: (_COCO17_JOINTS, _COCO17_BONES),
        SkeletonKind.BODY25: (_BODY25_JOINTS, _BODY25_BONES),
    }[kind]
    edges = tuple((names.index(c), names.index(p)) for c, p, _ in bones)
    kinds = tuple(k for _, _, k in bones)
    return Skeleton(kind, names, edges, tuple(float(table[k]) for k in kinds), kinds)


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Timestamped (F, J, 3) joint positions in metres.

    Construction only checks shapes; content problems (NaN joints, repeated
    timestamps, stretching bones) are reported by `validate_pose_sequence`.
    """

    skeleton: Skeleton
    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (self.skeleton.num_joints, 3):
            raise DimensionMismatch(
                f"frames must be (F, {self.skeleton.num_joints}, 3), got {frames.shape}")
        if ts.shape != (frames.shape[0],):
            raise DimensionMismatch("one timestamp per frame required")
        frames.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class BodySolid:
    """Union of capsules: segment endpoints (B, 3) and radii (B,), metres."""

    starts: np.ndarray
    ends: np.ndarray
    radii: np.ndarray
    total_mass: float

    def __post_init__(self):
        if len(self.radii) == 0:
            raise ValueError("a body needs at least one capsule")
        if np.any(~(np.asarray(self.radii) > 0)):
            raise ValueError("capsule radii must be positive")
        if not self.total_mass > 0:
            raise ValueError("total_mass must be positive")

    @property
    def capsules(self):
        return list(zip(self.starts, self.ends, self.radii))

    def translated(self, offset) -> "BodySolid":
        off = np.asarray(offset, dtype=np.float64)
        return BodySolid(self.starts + off, self.ends + off, self.radii, self.total_mass)


def body_geometry(pose: np.ndarray, skeleton: Skeleton, subject: SubjectProfile) -> BodySolid:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (skeleton.num_joints, 3):
        raise DimensionMismatch(
            f"pose has shape {pose.shape}, skeleton {skeleton.kind.name} needs ({skeleton.num_joints}, 3)")
    child, parent = np.array(skeleton.parent_edges).T
    radii = np.asarray(skeleton.capsule_radii) * 1e-3 * subject.scale
    return BodySolid(pose[parent].copy(), pose[child].copy(), radii, subject.mass)


# ---------------------------------------------------------------------------
# Synthetic motion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionSpec:
    template: MotionTemplate
    duration: float
    fps: float
    noise_amplitude: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.template, MotionTemplate):
            object.__setattr__(self, "template", MotionTemplate(self.template))
        _check_spec(self)

    @property
    def num_frames(self) -> int:
        return int(round(self.duration * self.fps))


def _check_spec(spec):
    if not (math.isfinite(spec.duration) and spec.duration > 0):
        raise InvalidSpec(f"duration must be positive, got {spec.duration!r}")
    if not (math.isfinite(spec.fps) and spec.fps > 0):
        raise InvalidSpec(f"fps must be positive, got {spec.fps!r}")
    if not spec.noise_amplitude >= 0:
        raise InvalidSpec(f"noise_amplitude must be >= 0, got {spec.noise_amplitude!r}")
    if not 0 <= int(spec.seed) < 2**64:
        raise InvalidSpec("seed must be an unsigned 64-bit integer")


# Neutral standing pose at 175 cm. Body frame: +x subject's left, +y facing, +z up.
_REST = {
    "nose": (0.0, 0.10, 1.62),
    "left_eye": (0.035, 0.085, 1.66), "right_eye": (-0.035, 0.085, 1.66),
    "left_ear": (0.075, 0.0, 1.635), "right_ear": (-0.075, 0.0, 1.635),
    "neck": (0.0, 0.0, 1.46),
    "left_shoulder": (0.18, 0.0, 1.43), "right_shoulder": (-0.18, 0.0, 1.43),
    "left_elbow": (0.20, 0.0, 1.13), "right_elbow": (-0.20, 0.0, 1.13),
    "left_wrist": (0.21, 0.0, 0.88), "right_wrist": (-0.21, 0.0, 0.88),
    "mid_hip": (0.0, 0.0, 0.95),
    "left_hip": (0.09, 0.0, 0.95), "right_hip": (-0.09, 0.0, 0.95),
    "left_knee": (0.09, 0.0, 0.52), "right_knee": (-0.09, 0.0, 0.52),
    "left_ankle": (0.09, 0.0, 0.09), "right_ankle": (-0.09, 0.0, 0.09),
    "left_heel": (0.09, -0.05, 0.025), "right_heel": (-0.09, -0.05, 0.025),
    "left_big_toe": (0.07, 0.16, 0.02), "right_big_toe": (-0.07, 0.16, 0.02),
    "left_small_toe": (0.12, 0.14, 0.02), "right_small_toe": (-0.12, 0.14, 0.02),
}

SEGMENTS = (
    "torso", "head",
    "l_upper_arm", "l_forearm", "r_upper_arm", "r_forearm",
    "l_thigh", "l_shin", "r_thigh", "r_shin", "l_foot", "r_foot",
)
_LIMB_AXES = {
    "upper_arm": ("shoulder", "elbow"),
    "forearm": ("elbow", "wrist"),
    "thigh": ("hip", "knee"),
    "shin": ("knee", "ankle"),
}


def _segment_of(child_name, kind):
    if kind in ("torso", "head"):
        return kind
    side = "l" if child_name.startswith("left_") else "r"
    return f"{side}_{kind}"


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def frame(up, forward) -> np.ndarray:
    """Rotation taking the body frame to axes (lateral, forward, up)."""
    u = _unit(up)
    f = np.asarray(forward, dtype=np.float64)
    f = _unit(f - np.dot(f, u) * u)
    lateral = np.cross(f, u)
    return np.column_stack([lateral, f, u])


def aim(rest_dir, target_dir) -> np.ndarray:
    """Smallest rotation turning rest_dir onto target_dir."""
    a, b = _unit(rest_dir), _unit(target_dir)
    axis = np.cross(a, b)
    s, c = np.linalg.norm(axis), float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = _unit(np.cross(a, [1.0, 0.0, 0.0] if abs(a[0]) < 0.9 else [0.0, 1.0, 0.0]))
        return Rotation.from_rotvec(math.pi * perp).as_matrix()
    return Rotation.from_rotvec(axis / s * math.atan2(s, c)).as_matrix()


def dropping(horizontal, drop, length):
    """Unit vector along `horizontal` that descends `drop` metres over `length`."""
    h = _unit(np.append(np.asarray(horizontal, dtype=np.float64)[:2], 0.0))
    sin = np.clip(drop / length, -1.0, 1.0)
    return h * math.sqrt(1.0 - sin * sin) + np.array([0.0, 0.0, sin])


class _Rig:
    """Forward kinematics for one skeleton scaled to one subject."""

    def __init__(self, skeleton: Skeleton, subject: SubjectProfile):
        self.skeleton = skeleton
        self.scale = subject.scale
        names = skeleton.joint_names
        rest = np.array([_REST[n] for n in names]) * self.scale
        self.order = _topological_order(skeleton.num_joints, skeleton.parent_edges)
        self.edges = skeleton.parent_edges
        self.rest_vectors = np.array([rest[c] - rest[p] for c, p in self.edges])
        self.bone_segment = [_segment_of(names[c], k) for (c, _), k in zip(self.edges, skeleton.bone_kinds)]
        self.radius = skeleton.joint_radii_mm() * 1e-3 * self.scale
        self.rest_dirs = {}
        for kind, (a, b) in _LIMB_AXES.items():
            for side, prefix in (("l", "left_"), ("r", "right_")):
                self.rest_dirs[f"{side}_{kind}"] = _unit(
                    np.array(_REST[prefix + b]) - np.array(_REST[prefix + a]))
        self.length = {
            kind: float(np.linalg.norm(np.subtract(_REST["left_" + b], _REST["left_" + a]))) * self.scale
            for kind, (a, b) in _LIMB_AXES.items()
        }

    def idx(self, name):
        return self.skeleton.index(name)

    def r(self, name):
        return float(self.radius[self.idx(name)])

    def solve(self, posture: dict) -> np.ndarray:
        """Joint positions (J, 3) with the root at the origin."""
        rot = {}
        torso = posture.get("torso", np.eye(3))
        for seg in SEGMENTS:
            value = posture.get(seg)
            if value is None:
                value = torso if seg in ("head", "l_foot", "r_foot") else torso @ self.rest_dirs[seg]
            value = np.asarray(value, dtype=np.float64)
            rot[seg] = value if value.shape == (3, 3) else aim(self.rest_dirs[seg], value)
        noise = posture.get("_noise")
        if noise is not None:
            rot = {k: noise[k] @ v for k, v in rot.items()}
        pos = np.zeros((self.skeleton.num_joints, 3))
        for b in self.order:
            c, p = self.edges[b]
            pos[c] = pos[p] + rot[self.bone_segment[b]] @ self.rest_vectors[b]
        return pos


@dataclass
class _Posture:
    segments: dict
    supports: list
    anchor: str = "supports"


def _supports(rig, coco, body25):
    return coco if rig.skeleton.kind is SkeletonKind.COCO17 else body25


def _bottom(rig, pos, names):
    return min(pos[rig.idx(n), 2] - rig.r(n) for n in names)


def _level(rig, build: Callable[[float], dict], group_a, group_b, lo, hi):
    """Find the parameter making the lowest surfaces of two joint groups level."""

    def err(x):
        pos = rig.solve(build(x))
        return _bottom(rig, pos, group_a) - _bottom(rig, pos, group_b)

    ea, eb = err(lo), err(hi)
    if ea * eb > 0:
        return lo if abs(ea) < abs(eb) else hi
    return brentq(err, lo, hi, xtol=1e-12)


UP = np.array([0.0, 0.0, 1.0])
DOWN = -UP


def _stand_sway(rig, t, noise):
    a = 0.05 * math.sin(2 * math.pi * t / 4.0)
    up = np.array([0.0, math.sin(a), math.cos(a)])
    swing = 0.12 * math.sin(2 * math.pi * t / 4.0 + 1.0)
    arm = _unit(-up + np.array([0.0, swing, 0.0]))
    seg = {"torso": frame(up, [0, 1, 0]), "_noise": noise,
           "l_thigh": -up, "l_shin": -up, "r_thigh": -up, "r_shin": -up,
           "l_upper_arm": arm, "l_forearm": arm, "r_upper_arm": arm, "r_forearm": arm,
           "l_foot": np.eye(3), "r_foot": np.eye(3)}
    return _Posture(seg, _supports(rig, ["left_ankle", "right_ankle"],
                                   ["left_heel", "right_heel", "left_big_toe", "right_big_toe"]))


def _squat_like(rig, s, thigh, shin, lean, arms, noise):
    up = np.array([0.0, math.sin(lean * s), math.cos(lean * s)])
    th = np.array([0.0, math.sin(thigh), -math.cos(thigh)])
    sh = np.array([0.0, -math.sin(shin * s), -math.cos(shin * s)])
    arm = np.array([0.0, math.sin(arms * s), -math.cos(arms * s)])
    return {"torso": frame(up, [0, 1, 0]), "_noise": noise,
            "l_thigh": th, "r_thigh": th, "l_shin": sh, "r_shin": sh,
            "l_upper_arm": arm, "l_forearm": arm, "r_upper_arm": arm, "r_forearm": arm,
            "l_foot": np.eye(3), "r_foot": np.eye(3)}


def _feet(rig):
    return _supports(rig, ["left_ankle", "right_ankle"],
                     ["left_heel", "right_heel", "left_big_toe", "right_big_toe"])


def _squat_cycle(rig, t, noise):
    s = 0.5 * (1.0 - math.cos(2 * math.pi * t / 8.0))
    return _Posture(_squat_like(rig, s, 1.3 * s, 0.65, 0.5, 1.2, noise), _feet(rig))


_SIT_DEPTH: dict = {}


def _sit_to_stand(rig, t, noise):
    key = (rig.skeleton, rig.scale)
    if key not in _SIT_DEPTH:
        # Deepest thigh angle at which the pelvis rests level with the soles.
        _SIT_DEPTH[key] = _level(rig, lambda x: _squat_like(rig, 1.0, x, 0.9, 0.4, 1.0, None),
                                 ["left_hip", "right_hip"], _feet(rig), 1.3, 2.6)
    s = 0.5 * (1.0 - math.cos(2 * math.pi * t / 10.0))
    return _Posture(_squat_like(rig, s, _SIT_DEPTH[key] * s, 0.9, 0.4, 1.0, noise), _feet(rig))


def _plank(rig, t, noise):
    theta_t = 0.40 + 0.05 * math.sin(2 * math.pi * t / 5.0)
    torso = frame([0.0, math.cos(theta_t), math.sin(theta_t)], [0.0, math.sin(theta_t), -math.cos(theta_t)])
    foot = frame([0.0, -1.0, 0.0], [0.0, 0.26, -0.97])
    arms = _supports(rig, ["left_wrist", "right_wrist"], ["left_wrist", "right_wrist"])
    toes = _supports(rig, ["left_ankle", "right_ankle"], ["left_big_toe", "right_big_toe"])

    def build(theta_l):
        leg = np.array([0.0, -math.cos(theta_l), -math.sin(theta_l)])
        return {"torso": torso, "_noise": noise, "l_thigh": leg, "l_shin": leg, "r_thigh": leg, "r_shin": leg,
                "l_upper_arm": DOWN, "l_forearm": DOWN, "r_upper_arm": DOWN, "r_forearm": DOWN,
                "l_foot": foot, "r_foot": foot}

    theta_l = _level(rig, build, toes, arms, -0.3, 1.2)
    return _Posture(build(theta_l), arms + toes)


def _lying_arms(rig, abduction):
    """Arms resting on the mat beside a supine torso (head toward +Y)."""
    out = {}
    drop_upper = rig.r("left_elbow") - rig.r("left_shoulder")
    drop_fore = rig.r("left_wrist") - rig.r("left_elbow")
    for side, sign in (("l", -1.0), ("r", 1.0)):
        h = [sign * math.sin(abduction), -math.cos(abduction)]
        out[f"{side}_upper_arm"] = dropping(h, drop_upper, rig.length["upper_arm"])
        out[f"{side}_forearm"] = dropping(h, drop_fore, rig.length["forearm"])
    return out


def _supine(rig, t, noise):
    breath = 0.01 * math.sin(2 * math.pi * t / 4.0)
    torso = frame([0.0, 1.0, breath], [0.0, 0.0, 1.0])
    abduction = 0.15 + 0.55 * 0.5 * (1.0 - math.cos(2 * math.pi * t / 12.0))
    seg = {"torso": torso, "_noise": noise, **_lying_arms(rig, abduction)}
    knee_drop = rig.r("left_knee") - rig.r("left_hip")
    ankle_drop = rig.r("left_ankle") - rig.r("left_knee")
    spread = 0.08 * math.sin(2 * math.pi * t / 12.0)
    for side, sign in (("l", -1.0), ("r", 1.0)):
        h = [sign * (0.05 + spread), -1.0]
        seg[f"{side}_thigh"] = dropping(h, knee_drop, rig.length["thigh"])
        seg[f"{side}_shin"] = dropping(h, ankle_drop, rig.length["shin"])
    seg["l_foot"] = seg["r_foot"] = frame([0.0, -1.0, 0.0], [0.0, 0.0, 1.0])
    sup = ["left_shoulder", "right_shoulder", "left_hip", "right_hip"]
    return _Posture(seg, sup, anchor="fixed")


def _bridge(rig, t, noise):
    s = 0.5 * (1.0 - math.cos(2 * math.pi * t / 6.0))
    gamma = 0.45 * s
    torso = frame([0.0, math.cos(gamma), -math.sin(gamma)], [0.0, math.sin(gamma), math.cos(gamma)])
    head = frame([0.0, 1.0, 0.0], [0.0, 0.0, 1.0])
    kappa = 0.45 - 0.35 * s
    thigh = np.array([0.0, -math.cos(kappa), math.sin(kappa)])
    shoulders = ["left_shoulder", "right_shoulder"]
    feet = _supports(rig, ["left_ankle", "right_ankle"],
                     ["left_heel", "right_heel", "left_big_toe", "right_big_toe"])
    foot = frame([0.0, 0.0, 1.0], [0.0, -1.0, 0.0])
    arms = _lying_arms(rig, 0.2)

    def build(nu):
        shin = np.array([0.0, math.sin(nu), -math.cos(nu)])
        return {"torso": torso, "head": head, "_noise": noise, **arms,
                "l_thigh": thigh, "r_thigh": thigh, "l_shin": shin, "r_shin": shin,
                "l_foot": foot, "r_foot": foot}

    nu = _level(rig, build, feet, shoulders, 0.0, 1.5)
    return _Posture(build(nu), shoulders + feet, anchor="fixed")


_TEMPLATES = {
    MotionTemplate.STAND_SWAY: _stand_sway,
    MotionTemplate.SQUAT_CYCLE: _squat_cycle,
    MotionTemplate.PLANK: _plank,
    MotionTemplate.BRIDGE: _bridge,
    MotionTemplate.SUPINE: _supine,
    MotionTemplate.SIT_TO_STAND: _sit_to_stand,
}


class _SmoothNoise:
    """Band-limited rotation and drift noise; amplitude given in metres."""

    def __init__(self, amplitude, seed):
        rng = np.random.default_rng(seed)
        self.amplitude = amplitude
        n = len(SEGMENTS) + 1
        self.freq = rng.uniform(0.05, 0.4, size=(n, 3, 3))
        self.phase = rng.uniform(0.0, 2 * math.pi, size=(n, 3, 3))
        self.weight = rng.uniform(0.5, 1.0, size=(n, 3, 3)) / 3.0

    def _signal(self, i, t):
        return np.sum(self.weight[i] * np.sin(2 * math.pi * self.freq[i] * t + self.phase[i]), axis=-1)

    def rotations(self, t):
        if self.amplitude == 0:
            return None
        # Rotation angle ~ amplitude / 0.4 m (typical lever arm of a segment).
        return {seg: Rotation.from_rotvec(self._signal(i, t) * self.amplitude / 0.4).as_matrix()
                for i, seg in enumerate(SEGMENTS)}

    def drift(self, t):
        v = self._signal(len(SEGMENTS), t) * self.amplitude
        v[2] = 0.0
        return v


def generate_motion(spec: MotionSpec, skeleton: Skeleton, subject: SubjectProfile) -> PoseSequence:
    """Deterministic synthetic pose sequence for one motion template.

    Bones are rigid (rotations of rest-pose bone vectors), so bone lengths
    are constant up to rounding. Support joints are grounded so that their
    lowest capsule surfaces are level and the highest support joint sits
    20 mm above the mat.
    """
    _check_spec(spec)
    rig = _Rig(skeleton, subject)
    build = _TEMPLATES[spec.template]
    noise = _SmoothNoise(spec.noise_amplitude, int(spec.seed))
    n = spec.num_frames
    ts = np.arange(n, dtype=np.float64) / spec.fps
    frames = np.empty((n, skeleton.num_joints, 3))
    anchor_xy = None
    for i, t in enumerate(ts):
        posture = build(rig, float(t), noise.rotations(float(t)))
        pos = rig.solve(posture.segments)
        sidx = [rig.idx(name) for name in posture.supports]
        if posture.anchor == "supports":
            pos[:, :2] -= pos[sidx, :2].mean(axis=0)
        elif anchor_xy is None:
            anchor_xy = 0.5 * (pos[:, :2].min(axis=0) + pos[:, :2].max(axis=0))
        if posture.anchor != "supports":
            pos[:, :2] -= anchor_xy
        pos[:, :2] += np.asarray(MAT_CENTER) + noise.drift(float(t))[:2]
        radii = rig.radius[sidx]
        level = 0.02 - radii.max()
        pos[:, 2] += level - np.min(pos[sidx, 2] - radii)
        frames[i] = pos
    return PoseSequence(skeleton, frames, ts)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str  # "non_finite" | "timestamp" | "bone_length"
    index: int  # frame index, or bone index for bone_length
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def of_kind(self, kind):
        return [v for v in self.violations if v.kind == kind]


def validate_pose_sequence(seq: PoseSequence, bone_tolerance: float = 0.05) -> ValidationReport:
    out = []
    frames, ts = seq.frames, seq.timestamps
    finite = np.isfinite(frames).all(axis=(1, 2))
    for i in np.flatnonzero(~finite):
        out.append(Violation("non_finite", int(i), "joint coordinates contain NaN or Inf"))
    if not np.isfinite(ts).all():
        for i in np.flatnonzero(~np.isfinite(ts)):
            out.append(Violation("timestamp", int(i), "timestamp is not finite"))
    for i in np.flatnonzero(np.diff(ts) <= 0) + 1:
        out.append(Violation("timestamp", int(i), f"{ts[i]!r} does not exceed {ts[i - 1]!r}"))
    good = frames[finite]
    if len(good) > 1:
        lengths = seq.skeleton.bone_lengths(good)
        mean = lengths.mean(axis=0)
        spread = lengths.std(axis=0)
        for b in np.flatnonzero(spread > bone_tolerance * mean):
            out.append(Violation("bone_length", int(b),
                                 f"std {spread[b]:.4g} m exceeds {bone_tolerance:.0%} of mean {mean[b]:.4g} m"))
    return ValidationReport(tuple(out))
