"""Fast built-in checks run by ``pressim selftest``.

Each check prints one ``PASS``/``FAIL`` line. The checks are smaller
versions of the test suite's oracles, so they finish in well under a minute.
"""
from __future__ import annotations

import time

import numpy as np

from . import deformsim, evalkit
from .datapipe import SequenceKind, decode_sequence, encode_sequence
from .nn import NetworkKind, build_model, grad_check_report
from .nn.checkpoint import decode, encode
from .nn.model import GRID, input_shape_for
from .posekit import BodySolid


def _brute_metrics(pred, gt):
    """Loop-by-loop reference values for (mae, mask_rmsd, corrected_r2, binarized_r2)."""
    n, rows, cols = gt.shape
    abs_sum, rmsds, cr2s, br2s = 0.0, [], [], []
    for f in range(n):
        sq, cnt, vals = 0.0, 0, []
        for r in range(rows):
            for c in range(cols):
                abs_sum += abs(pred[f, r, c] - gt[f, r, c])
                if gt[f, r, c] > 0:
                    sq += (pred[f, r, c] - gt[f, r, c]) ** 2
                    cnt += 1
                    vals.append(gt[f, r, c])
        if cnt:
            rmsds.append((sq / cnt) ** 0.5)
            mean = sum(vals) / cnt
            var = sum((v - mean) ** 2 for v in vals) / cnt
            if var > 0:
                cr2s.append(1 - (sq / cnt) / var)
        bp = [[1.0 if pred[f, r, c] > 0 else 0.0 for c in range(cols)] for r in range(rows)]
        bg = [[1.0 if gt[f, r, c] > 0 else 0.0 for c in range(cols)] for r in range(rows)]
        mean = sum(map(sum, bg)) / (rows * cols)
        ss_tot = sum((bg[r][c] - mean) ** 2 for r in range(rows) for c in range(cols))
        ss_res = sum((bg[r][c] - bp[r][c]) ** 2 for r in range(rows) for c in range(cols))
        br2s.append(1 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0))
    return (abs_sum / (n * rows * cols), sum(rmsds) / len(rmsds), sum(cr2s) / len(cr2s),
            sum(br2s) / len(br2s))


def check_metrics(rng, frames=20):
    gt = np.where(rng.random((frames, *GRID)) < 0.3, rng.uniform(0, 5000, (frames, *GRID)), 0.0)
    pred = np.where(rng.random((frames, *GRID)) < 0.5, gt + rng.normal(0, 50, gt.shape), 0.0)
    fast = (evalkit.mae(pred, gt), evalkit.mask_rmsd(pred, gt), evalkit.corrected_r2(pred, gt),
            evalkit.binarized_r_squared(pred, gt))
    worst = max(abs(a - b) for a, b in zip(fast, _brute_metrics(pred, gt)))
    return worst < 1e-9, f"{frames} random frame pairs, max |fast - loop| = {worst:.2e}"


def check_settle(rng, bodies=20):
    plane = deformsim.PlaneModel()
    cells = [(r, c) for r in range(30, 40) for c in range(9, 19)]
    res = deformsim.settle(deformsim.flat_patch(cells, 74.3, plane), plane)
    value = int(deformsim.rasterize_deformation(res, plane)[35, 12])
    worst = res.residual
    for _ in range(bodies):
        k = int(rng.integers(1, 6))
        a = np.column_stack([rng.uniform(0.1, 0.46, k), rng.uniform(0.2, 1.5, k),
                             rng.uniform(0.0, 0.3, k)])
        b = a + rng.normal(0, 0.15, (k, 3))
        body = BodySolid(a, b, rng.uniform(0.03, 0.15, k), float(rng.uniform(55, 95)))
        worst = max(worst, deformsim.settle(body, plane).residual)
    ok = abs(res.settle_depth - 7.29e-3) < 5e-6 and value == 186 and worst < 1e-6
    return ok, (f"flat patch d = {res.settle_depth * 1e3:.4f} mm, value {value}; "
                f"max residual over {bodies + 1} bodies = {worst:.1e}")


def check_gradients(rng, probes=25):
    worst_all, parts = 0.0, []
    for kind in NetworkKind:
        net = build_model(kind, seed=int(rng.integers(1 << 31)), dtype=np.float64)
        shape = input_shape_for(kind)
        if net.multi_input:
            x = tuple(rng.random((2, *s)) * 0.1 for s in shape)
        else:
            x = rng.random((2, *shape)) * 0.5
        report = grad_check_report(net, x, rng.random((2, *GRID)) * 0.1, per_kind=probes,
                                   seed=int(rng.integers(1 << 31)))
        worst = max(report.values())
        worst_all = max(worst_all, worst)
        parts.append(f"{kind.name} {worst:.1e}")
    return worst_all < 1e-3, "max relative error: " + ", ".join(parts)


def check_formats(rng):
    ok = True
    for kind in SequenceKind:
        frames = rng.random((5, *kind.frame_shape)) * (255 if kind is SequenceKind.DEFORM else 5000)
        frames = frames.astype(kind.dtype)
        frames.reshape(5, -1)[0, :2] = (0, 255) if kind is SequenceKind.DEFORM else (0.0, 5000.0)
        ts = np.cumsum(rng.uniform(0.01, 0.2, 5))
        back = decode_sequence(encode_sequence(kind, ts, frames))
        ok &= back.kind is kind and np.array_equal(back.timestamps, ts) \
            and back.frames.tobytes() == frames.tobytes()
    net = build_model(NetworkKind.TPN, seed=3)
    kind, tensors = decode(encode(net))
    ok &= kind is NetworkKind.TPN and all(
        np.array_equal(tensors[f"param/{k}"], v) for k, v in net.parameters().items())
    return ok, "sequence kinds POSE17, POSE25, DEFORM, PRESSURE and a TPN checkpoint"


CHECKS = (("metric oracles", check_metrics), ("settle force balance", check_settle),
          ("gradients", check_gradients), ("format round-trips", check_formats))


def run_selftest(emit=print, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, check in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = check(rng)
        except Exception as err:  # a crashing check is a failed check
            ok, detail = False, f"{type(err).__name__}: {err}"
        all_ok &= bool(ok)
        emit(f"{'PASS' if ok else 'FAIL'}  {name:<22} {detail}  "
             f"({time.perf_counter() - t0:.1f} s)")
    return all_ok
