"""Independent, loop-based reference implementations used as test oracles.

These deliberately avoid the vectorised code paths of the package: plain
Python loops over frames and cells, written straight from the definitions.
"""
import math

import numpy as np


def mae(pred, gt):
    total, count = 0.0, 0
    for f in range(len(gt)):
        for r in range(gt.shape[1]):
            for c in range(gt.shape[2]):
                total += abs(float(pred[f, r, c]) - float(gt[f, r, c]))
                count += 1
    return total / count


def _r2(p, g):
    cells = [(r, c) for r in range(g.shape[0]) for c in range(g.shape[1])]
    mean = sum(float(g[r, c]) for r, c in cells) / len(cells)
    ss_tot = sum((float(g[r, c]) - mean) ** 2 for r, c in cells)
    ss_res = sum((float(g[r, c]) - float(p[r, c])) ** 2 for r, c in cells)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / ss_tot


def binarized_r2(pred, gt):
    scores = []
    for f in range(len(gt)):
        bp = np.array([[1.0 if v > 0 else 0.0 for v in row] for row in pred[f]])
        bg = np.array([[1.0 if v > 0 else 0.0 for v in row] for row in gt[f]])
        scores.append(_r2(bp, bg))
    return sum(scores) / len(scores)


def _masked(pred_f, gt_f):
    pairs = []
    for r in range(gt_f.shape[0]):
        for c in range(gt_f.shape[1]):
            if gt_f[r, c] > 0:
                pairs.append((float(pred_f[r, c]), float(gt_f[r, c])))
    return pairs


def mask_rmsd(pred, gt):
    values = []
    for f in range(len(gt)):
        pairs = _masked(pred[f], gt[f])
        if pairs:
            values.append(math.sqrt(sum((p - g) ** 2 for p, g in pairs) / len(pairs)))
    return sum(values) / len(values)


def corrected_r2(pred, gt):
    values = []
    for f in range(len(gt)):
        pairs = _masked(pred[f], gt[f])
        if not pairs:
            continue
        mean = sum(g for _, g in pairs) / len(pairs)
        var = sum((g - mean) ** 2 for _, g in pairs) / len(pairs)
        if var == 0:
            continue
        msd = sum((p - g) ** 2 for p, g in pairs) / len(pairs)
        values.append(1.0 - msd / var)
    return sum(values) / len(values)


def alpha_scan(pressure, deformation, lo, hi, steps=4001, rounds=6):
    """Minimise sum (p - a d)^2 over a by repeated grid refinement."""
    p = np.asarray(pressure, dtype=np.float64).ravel()
    d = np.asarray(deformation, dtype=np.float64).ravel()
    for _ in range(rounds):
        grid = np.linspace(lo, hi, steps)
        cost = [float(np.sum((p - a * d) ** 2)) for a in grid]
        i = int(np.argmin(cost))
        step = grid[1] - grid[0]
        lo, hi = grid[max(i - 1, 0)] - step, grid[min(i + 1, steps - 1)] + step
    return float(grid[i])


def total_spring_force(body, plane, depth):
    """Sum over every cell (row-major loop) of k * penetration at ``depth``."""
    centers = plane.cell_centers()
    force = 0.0
    for r in range(plane.rows):
        for c in range(plane.cols):
            x, y = centers[r, c]
            lowest = math.inf
            for a, b, rad in zip(body.starts, body.ends, body.radii):
                ab = b[:2] - a[:2]
                denom = float(ab @ ab)
                if denom == 0:  # vertical capsule: its lowest point is at the lower end
                    t = 0.0 if a[2] <= b[2] else 1.0
                else:
                    t = min(1.0, max(0.0, float((np.array([x, y]) - a[:2]) @ ab) / denom))
                cx, cy = a[:2] + t * ab
                rxy = math.hypot(x - cx, y - cy)
                if rxy <= rad:
                    z = a[2] + t * (b[2] - a[2]) - math.sqrt(rad * rad - rxy * rxy)
                    lowest = min(lowest, z)
            if lowest < math.inf:
                force += plane.stiffness_k * max(0.0, -(lowest - depth))
    return force


def nearest(source, t):
    """Index of the source timestamp closest to t; earlier index wins ties."""
    best, best_d = 0, math.inf
    for i, s in enumerate(source):
        d = abs(s - t)
        if d < best_d:
            best, best_d = i, d
    return best
