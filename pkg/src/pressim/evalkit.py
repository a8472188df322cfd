"""Evaluation metrics for synthesised pressure maps and comparative reports.

All metrics are computed per frame and then averaged over frames. Degenerate
frames (empty contact mask, zero masked variance) are skipped by the masked
metrics and counted in the report rather than scored as 0 or 1.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import AllFramesEmpty, LengthMismatch, PressimError

CSV_HEADER = "model,mae_mmhg,mask_rmsd_mmhg,corrected_r2,binarized_r2,frames"


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred = pred[None]
    if gt.ndim == 2:
        gt = gt[None]
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted frames vs {len(gt)} ground-truth frames")
    if pred.shape != gt.shape:
        raise LengthMismatch(f"frame shapes differ: {pred.shape[1:]} vs {gt.shape[1:]}")
    if len(gt) == 0:
        raise LengthMismatch("no frames to evaluate")
    return pred.reshape(len(pred), -1), gt.reshape(len(gt), -1)


def mae(pred, gt) -> float:
    """Mean absolute error over all frames and cells."""
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def binarize(frame) -> np.ndarray:
    """1 where the value is strictly positive, else 0."""
    return (np.asarray(frame) > 0).astype(np.uint8)


def frame_r_squared(pred, gt) -> np.ndarray:
    """Per-frame coefficient of determination about each frame's ground-truth mean.

    A frame whose ground truth is constant scores 1 if predicted exactly and
    0 otherwise.
    """
    p, g = _pair(pred, gt)
    ss_res = np.sum((g - p) ** 2, axis=1)
    ss_tot = np.sum((g - g.mean(axis=1, keepdims=True)) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    return np.where(ss_tot > 0, r2, np.where(ss_res == 0, 1.0, 0.0))


def r_squared(pred, gt) -> float:
    return float(np.mean(frame_r_squared(pred, gt)))


def binarized_r_squared(pred, gt) -> float:
    """R-squared of the contact shapes: both maps thresholded at > 0."""
    return r_squared(binarize(pred), binarize(gt))


@dataclass(frozen=True)
class ContactMask:
    indices: tuple[tuple[int, int], ...]
    frame: int = 0

    def __len__(self):
        return len(self.indices)


def contact_mask(gt, frame: int = 0) -> ContactMask:
    """Cells with positive ground-truth pressure, in row-major order."""
    rows, cols = np.nonzero(np.asarray(gt) > 0)
    return ContactMask(tuple(zip(rows.tolist(), cols.tolist())), frame)


def frame_mask_rmsd(pred, gt) -> np.ndarray:
    """Per-frame RMS difference over the contact mask; NaN for empty masks."""
    p, g = _pair(pred, gt)
    mask = g > 0
    count = mask.sum(axis=1)
    sq = np.where(mask, (p - g) ** 2, 0.0).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(count > 0, np.sqrt(sq / count), np.nan)


def mask_rmsd(pred, gt) -> float:
    values = frame_mask_rmsd(pred, gt)
    valid = ~np.isnan(values)
    if not valid.any():
        raise AllFramesEmpty("every ground-truth frame has an empty contact mask")
    return float(np.mean(values[valid]))


def frame_corrected_r2(pred, gt) -> np.ndarray:
    """Per-frame ``1 - RMSD^2 / var(masked gt)``; NaN where undefined."""
    p, g = _pair(pred, gt)
    mask = g > 0
    count = mask.sum(axis=1)
    safe = np.maximum(count, 1)
    mean = np.where(mask, g, 0.0).sum(axis=1) / safe
    var = np.where(mask, (g - mean[:, None]) ** 2, 0.0).sum(axis=1) / safe
    msd = np.where(mask, (p - g) ** 2, 0.0).sum(axis=1) / safe
    ok = (count > 0) & (var > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, 1.0 - msd / var, np.nan)


def corrected_r2(pred, gt) -> float:
    values = frame_corrected_r2(pred, gt)
    valid = ~np.isnan(values)
    if not valid.any():
        raise AllFramesEmpty("no frame has a contact mask with non-zero variance")
    return float(np.mean(values[valid]))


# -- reports -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    model: str
    mae: float
    mask_rmsd: float
    corrected_r2: float
    binarized_r2: float
    frames: int
    empty_mask_frames: int = 0
    flat_mask_frames: int = 0


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[MetricRow, ...]
    frames: int
    dataset: str = ""

    def row(self, model: str) -> MetricRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(f"{r.model},{r.mae!r},{r.mask_rmsd!r},{r.corrected_r2!r},"
                      f"{r.binarized_r2!r},{r.frames}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        names = [r.model for r in self.rows]
        width = max([12] + [len(n) for n in names])
        head = f"{'metric':<18}" + "".join(f"{n:>{width + 2}}" for n in names)
        lines = [f"dataset: {self.dataset or '-'}   frames: {self.frames}", head,
                 "-" * len(head)]
        for label, attr, fmt in (("MAE (mmHg)", "mae", ".3f"),
                                 ("Mask RMSD (mmHg)", "mask_rmsd", ".3f"),
                                 ("Corrected R2", "corrected_r2", ".4f"),
                                 ("Binarized R2", "binarized_r2", ".4f")):
            lines.append(f"{label:<18}" + "".join(
                f"{format(getattr(r, attr), fmt):>{width + 2}}" for r in self.rows))
        skipped = [(r.model, r.empty_mask_frames, r.flat_mask_frames) for r in self.rows
                   if r.empty_mask_frames or r.flat_mask_frames]
        for model, empty, flat in skipped:
            lines.append(f"note: {model}: {empty} empty-mask and {flat} zero-variance "
                         f"frames skipped by the masked metrics")
        return "\n".join(lines) + "\n"


class ModelMetricError(PressimError, ValueError):
    """A metric failed for one model; ``model`` names it."""

    def __init__(self, model, error):
        super().__init__(f"model {model!r}: {error}")
        self.model = model
        self.error = error


def evaluate_model(name: str, pred, gt) -> MetricRow:
    _, g = _pair(pred, gt)
    empty = int(np.sum((g > 0).sum(axis=1) == 0))
    undefined = int(np.sum(np.isnan(frame_corrected_r2(pred, gt))))
    return MetricRow(name, mae(pred, gt), mask_rmsd(pred, gt), corrected_r2(pred, gt),
                     binarized_r_squared(pred, gt), len(g), empty, undefined - empty)


def report(models, gt, dataset: str = "") -> MetricReport:
    """Score every ``(name, predictions)`` pair against ``gt``."""
    gt = np.asarray(gt)
    rows = []
    for name, pred in models:
        try:
            rows.append(evaluate_model(name, pred, gt))
        except (LengthMismatch, AllFramesEmpty) as err:
            raise ModelMetricError(name, err) from err
    return MetricReport(tuple(rows), len(gt) if gt.ndim == 3 else 1, dataset)
