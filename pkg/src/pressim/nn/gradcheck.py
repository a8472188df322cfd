"""Finite-difference verification of the analytic parameter gradients."""
from __future__ import annotations

import math

import numpy as np

from .losses import squared_error_sum
from .model import Network


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def _batched(net: Network, inputs):
    if net.multi_input:
        return tuple(np.asarray(a, dtype=np.float64)[None] if np.ndim(a) == 2 else
                     np.asarray(a, dtype=np.float64) for a in inputs)
    a = np.asarray(inputs, dtype=np.float64)
    return a[None] if a.ndim == len(net.input_shape) else a


def _relu_masks(net: Network):
    return [layer._cache.copy() for layer in net.layers if layer.kind == "relu"]


def _same(masks, ref) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(masks, ref))


class GradCheckReport(dict):
    """``{layer kind: max relative error}`` plus probe bookkeeping.

    ``probes`` counts the accepted probes per kind. ``kinks`` counts the
    probes that were redrawn because the +/- step moved some relu input
    across zero even after shrinking the step 1000-fold; a central difference
    across a kink does not estimate a derivative.
    """

    def __init__(self):
        super().__init__()
        self.probes: dict[str, int] = {}
        self.kinks: dict[str, int] = {}


def grad_check_report(net: Network, inputs, target, *, step: float = 1e-5,
                      per_kind: int = 200, seed: int = 0, kinds=None) -> GradCheckReport:
    """Max relative error between analytic and central-difference gradients, per layer kind.

    Runs on a float64 copy of ``net`` with batch-norm in training mode and
    dropout disabled; the loss is the per-sample squared-error sum. Each layer
    kind receives ``per_kind`` probes (or all of its parameters, if fewer),
    spread over its tensors in proportion to their size.
    """
    net = net.copy().astype(np.float64)
    x = _batched(net, inputs)
    t = np.asarray(target, dtype=np.float64)
    t = t[None] if t.ndim == 2 else t

    def loss():
        return squared_error_sum(net.forward(x, training=True, dropout=False), t)

    _, dy = loss()
    base_masks = _relu_masks(net)
    net.backward(dy)
    grads = {k: v.copy() for k, v in net.gradients().items()}

    rng = np.random.default_rng(seed)
    by_kind: dict[str, list] = {}
    for layer in net.layers:
        if layer.params and (kinds is None or layer.kind in kinds):
            for key, value in layer.params.items():
                by_kind.setdefault(layer.kind, []).append((f"{layer.name}.{key}", value))

    report = GradCheckReport()
    for kind, tensors in by_kind.items():
        total = sum(v.size for _, v in tensors)
        worst, accepted, kinks = 0.0, 0, 0
        for name, value in tensors:
            quota = min(value.size, max(5, math.ceil(per_kind * value.size / total)))
            flat = value.reshape(-1)
            got = 0
            for i in rng.permutation(value.size):
                if got == quota:
                    break
                orig = flat[i]
                for h in (step, step / 10, step / 100, step / 1000):
                    flat[i] = orig + h
                    up = loss()[0]
                    smooth = _same(_relu_masks(net), base_masks)
                    flat[i] = orig - h
                    down = loss()[0]
                    smooth = smooth and _same(_relu_masks(net), base_masks)
                    flat[i] = orig
                    if smooth:
                        break
                if not smooth:
                    kinks += 1
                    continue
                numeric = (up - down) / (2 * h)
                worst = max(worst, float(relative_error(grads[name].reshape(-1)[i], numeric)))
                got += 1
            accepted += got
        report[kind] = worst
        report.probes[kind] = accepted
        report.kinks[kind] = kinks
    return report


def grad_check(net: Network, inputs, target, tolerance: float | None = None, **kwargs) -> float:
    """Largest relative error over all checked parameters (see ``grad_check_report``).

    If ``tolerance`` is given, raises ``AssertionError`` when it is exceeded.
    """
    report = grad_check_report(net, inputs, target, **kwargs)
    worst = max(report.values()) if report else 0.0
    if tolerance is not None and worst >= tolerance:
        raise AssertionError(f"gradient check failed: {report}")
    return worst
