"""Quasi-static contact between a capsule body and the 80x28 sensor mat.

The mat is a bed of independent linear springs, one per sensor cell, sampled
at the centre of each cell's active area. The body may only translate
vertically: it is lowered until the summed spring force equals its weight.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoContact, NonConvergence
from .posekit import BodySolid, PoseSequence, SubjectProfile, body_geometry

PA_PER_MMHG = 133.322
PRESSURE_MAX_MMHG = 5000.0
MAX_SEARCH_DEPTH = 0.5
RESIDUAL_TOL = 1e-6
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class PlaneModel:
    rows: int = 80
    cols: int = 28
    pitch_y: float = 0.021  # m, along the 80-cell axis
    pitch_x: float = 0.020  # m, along the 28-cell axis
    sensor_x: float = 0.012
    sensor_y: float = 0.016
    stiffness_k: float = 1.0e3  # N per metre of penetration, per cell
    d_max_mm: float = 10.0  # penetration rendered as 255
    gravity: float = 9.81

    def __post_init__(self):
        if (self.rows, self.cols) != (80, 28):
            raise ValueError("the sensor grid is fixed at 80 x 28")
        if not self.stiffness_k > 0:
            raise ValueError(f"stiffness_k must be positive, got {self.stiffness_k!r}")
        if not self.d_max_mm > 0:
            raise ValueError(f"d_max_mm must be positive, got {self.d_max_mm!r}")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def d_max(self) -> float:
        return self.d_max_mm * 1e-3

    @property
    def active_area(self) -> float:
        return self.sensor_x * self.sensor_y

    def cell_centers(self) -> np.ndarray:
        """(80, 28, 2) array of (x, y) active-area centres in metres."""
        y = (np.arange(self.rows) + 0.5) * self.pitch_y
        x = (np.arange(self.cols) + 0.5) * self.pitch_x
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy], axis=-1)


def surface_heights(body: BodySolid, plane: PlaneModel) -> np.ndarray:
    """Lowest body surface Z above every cell centre (+inf where uncovered)."""
    p = plane.cell_centers().reshape(-1, 1, 2)
    a, b, r = body.starts, body.ends, np.asarray(body.radii)
    ab = (b - a)[:, :2]
    len2 = np.einsum("ij,ij->i", ab, ab)
    safe = np.where(len2 > 1e-18, len2, 1.0)
    t = np.clip(np.einsum("pcj,cj->pc", p - a[:, :2], ab) / safe, 0.0, 1.0)
    # Vertical capsules: the XY distance is the same along the axis; use the lower end.
    t = np.where(len2 > 1e-18, t, (b[:, 2] < a[:, 2]).astype(np.float64))
    closest = a[:, :2] + t[..., None] * ab
    rxy2 = np.sum((p - closest) ** 2, axis=-1)
    axis_z = a[:, 2] + t * (b[:, 2] - a[:, 2])
    inside = rxy2 <= r * r
    h = np.where(inside, axis_z - np.sqrt(np.where(inside, r * r - rxy2, 0.0)), np.inf)
    return h.min(axis=1).reshape(plane.shape)


@dataclass(frozen=True, eq=False)
class SettleResult:
    """Equilibrium of one body on the mat.

    `settle_depth` is the downward travel (m) from the reference height; a
    body that starts interpenetrating the mat is first lifted by `lift` so
    that its lowest point over the mat just touches Z = 0.
    """

    settle_depth: float
    penetration: np.ndarray  # (80, 28) metres, zero outside contact
    residual: float
    lift: float = 0.0
    iterations: int = 0

    @property
    def contact_cells(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.penetration > 0)
        return [(int(r), int(c), float(self.penetration[r, c])) for r, c in zip(rows, cols)]


def _force(gaps, depth, k):
    return k * float(np.sum(np.maximum(0.0, depth - gaps)))


def settle(body: BodySolid, plane: PlaneModel = PlaneModel()) -> SettleResult:
    heights = surface_heights(body, plane)
    covered = np.isfinite(heights)
    if not covered.any():
        raise NoContact("no capsule lies over any sensor cell")
    lift = max(0.0, -float(heights[covered].min()))
    gaps = np.where(covered, heights + lift, np.inf).ravel()
    weight = body.total_mass * plane.gravity
    k = plane.stiffness_k

    hi = MAX_SEARCH_DEPTH
    if not np.any(gaps < hi):
        raise NoContact(f"no cell is reachable within {MAX_SEARCH_DEPTH} m of travel")
    while _force(gaps, hi, k) < weight:
        hi *= 2.0
        if hi > 1e3:
            raise NonConvergence("spring force cannot balance the body weight")
    lo = 0.0
    depth = hi
    for it in range(1, MAX_BISECTIONS + 1):
        depth = 0.5 * (lo + hi)
        f = _force(gaps, depth, k)
        if abs(f - weight) <= RESIDUAL_TOL * weight * 1e-3:
            break
        if f < weight:
            lo = depth
        else:
            hi = depth
    # The force is piecewise linear in depth: solve exactly on the active set.
    active = gaps < depth
    if active.any():
        exact = (weight / k + float(np.sum(gaps[active]))) / int(active.sum())
        outside = gaps[~active]
        if gaps[active].max() < exact <= (outside.min() if outside.size else np.inf):
            depth = exact
    residual = abs(_force(gaps, depth, k) - weight) / weight
    if residual >= RESIDUAL_TOL:
        raise NonConvergence(f"residual {residual:.3g} after {it} bisections")
    pen = np.maximum(0.0, depth - gaps).reshape(plane.shape)
    return SettleResult(depth, pen, residual, lift, it)


def rasterize_deformation(result: SettleResult, plane: PlaneModel = PlaneModel()) -> np.ndarray:
    """0-255 deformation profile, linear in penetration and saturating at d_max."""
    scaled = 255.0 * np.minimum(result.penetration, plane.d_max) / plane.d_max
    return np.floor(scaled + 0.5).astype(np.uint8)


def force_to_mmhg(force, plane: PlaneModel = PlaneModel()):
    return np.asarray(force) / plane.active_area / PA_PER_MMHG


def reference_pressure(result: SettleResult, plane: PlaneModel = PlaneModel()) -> np.ndarray:
    """Sensor pressure (mmHg) implied by the spring forces, clipped to the sensor range."""
    p = force_to_mmhg(plane.stiffness_k * result.penetration, plane)
    return np.clip(p, 0.0, PRESSURE_MAX_MMHG)


def alpha_estimate(pressure, deformation) -> float:
    """Least-squares scale between a pressure frame and a deformation frame."""
    p = np.asarray(pressure, dtype=np.float64).ravel()
    d = np.asarray(deformation, dtype=np.float64).ravel()
    if p.shape != d.shape:
        raise ValueError("frames must have the same shape")
    den = float(np.dot(d, d))
    return 0.0 if den == 0.0 else float(np.dot(p, d)) / den


@dataclass(frozen=True, eq=False)
class SimulatedSequence:
    deformation: np.ndarray  # (F, 80, 28) uint8
    pressure: np.ndarray  # (F, 80, 28) float64 mmHg
    timestamps: np.ndarray
    no_contact: np.ndarray  # (F,) bool

    def __len__(self):
        return len(self.timestamps)


def simulate_frame(pose, skeleton, subject, plane=PlaneModel()):
    result = settle(body_geometry(pose, skeleton, subject), plane)
    return rasterize_deformation(result, plane), reference_pressure(result, plane)


def simulate_sequence(poses: PoseSequence, subject: SubjectProfile,
                      plane: PlaneModel = PlaneModel()) -> SimulatedSequence:
    n = len(poses)
    deform = np.zeros((n, *plane.shape), dtype=np.uint8)
    pressure = np.zeros((n, *plane.shape))
    missing = np.zeros(n, dtype=bool)
    for i, pose in enumerate(poses.frames):
        try:
            deform[i], pressure[i] = simulate_frame(pose, poses.skeleton, subject, plane)
        except NoContact:
            missing[i] = True
        except NonConvergence as err:
            raise NonConvergence(str(err), frame=i) from err
    return SimulatedSequence(deform, pressure, poses.timestamps.copy(), missing)


def pressure_to_u8(pressure) -> np.ndarray:
    p = np.clip(np.asarray(pressure, dtype=np.float64), 0.0, PRESSURE_MAX_MMHG)
    return np.floor(255.0 * p / PRESSURE_MAX_MMHG + 0.5).astype(np.uint8)


def write_pgm(path, grid) -> None:
    """Binary greyscale PGM (P5), 28 wide by 80 tall, row-major."""
    grid = np.asarray(grid)
    if grid.shape != (80, 28) or grid.dtype != np.uint8:
        raise ValueError("expected an (80, 28) uint8 grid")
    Path(path).write_bytes(b"P5\n28 80\n255\n" + grid.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = b"P5\n28 80\n255\n"
    if not data.startswith(header) or len(data) != len(header) + 2240:
        raise ValueError(f"{path}: not an 80x28 P5 image")
    return np.frombuffer(data, dtype=np.uint8, offset=len(header)).reshape(80, 28).copy()


def flat_patch(cells, mass, plane: PlaneModel = PlaneModel(), bottom_z=0.0, radius=0.005) -> BodySolid:
    """Test solid: one thin vertical capsule over each listed (row, col) cell.

    Penetration is sampled at cell centres only, so this behaves as a
    perfectly flat-bottomed block covering exactly those cells.
    """
    centers = plane.cell_centers()
    xy = np.array([centers[r, c] for r, c in cells])
    lo = np.column_stack([xy, np.full(len(xy), bottom_z + radius)])
    hi = lo + np.array([0.0, 0.0, 0.05])
    return BodySolid(lo, hi, np.full(len(xy), radius), float(mass))
