"""The four reference networks and the container that runs them.

=========  =================  =====================================================
kind       input              trunk
=========  =================  =====================================================
TPN        10 x J x 3 pose    temporal conv3d -> BN -> conv3d (collapse time) -> BN
                              -> dense to 40 row profile -> upsample to 80x28 ->
                              3x3 conv regression head
TDN        10 x 80 x 28       temporal conv3d -> BN -> conv3d (collapse time) -> BN
                              -> 3x3 conv -> 5x5 conv regression head
PSN        (80x28, 80x28)     channel concat -> 7x7 conv -> BN -> 3x3 conv -> BN ->
                              7x7 conv -> relu
BASELINE   10 x J x 3 pose    TPN trunk up to the 40-unit dense layer, then dense
                              40 -> 256 -> 2240 and a 3x3 conv with relu
=========  =================  =====================================================

All hidden activations are relu; dropout (rate 0.3) follows each batch-norm
stage of the temporal networks.
"""
from __future__ import annotations

import copy
import enum

import numpy as np

from ..errors import ShapeMismatch
from .layers import (BatchNorm, ConcatInputs, Conv, Dense, Dropout, Flatten, Layer, ReLU,
                     UpsampleNearest)

GRID = (80, 28)
WINDOW = 10
DROPOUT_RATE = 0.3
# Normalised pressure rarely exceeds ~0.1, so the regression head starts small:
# initial predictions sit near zero instead of at unit scale.
HEAD_GAIN = 0.01


class NetworkKind(enum.IntEnum):
    TPN = 0
    TDN = 1
    PSN = 2
    BASELINE = 3

    @classmethod
    def parse(cls, value) -> "NetworkKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown network kind {value!r}") from None
        return cls(value)


class Network:
    """An ordered stack of layers plus its training state."""

    def __init__(self, kind: NetworkKind, layers: list[Layer], input_shape, rng_seed: int,
                 dtype=np.float32):
        self.kind = NetworkKind.parse(kind)
        self.layers = layers
        self.input_shape = input_shape
        self.rng_seed = int(rng_seed)
        self.dtype = np.dtype(dtype)
        self.epoch = 0
        self.optimizer_state: dict | None = None
        self.fusion: np.ndarray | None = None
        self._check_shapes()
        self.astype(self.dtype)

    # -- bookkeeping ---------------------------------------------------------

    @property
    def multi_input(self) -> bool:
        return isinstance(self.input_shape[0], tuple)

    def _check_shapes(self):
        if self.multi_input:
            shape = self.layers[0].output_shape(tuple(self.input_shape))
            rest = self.layers[1:]
        else:
            shape, rest = (*self.input_shape, 1), self.layers
        for layer in rest:
            shape = layer.output_shape(shape)
        if shape != (*GRID, 1):
            raise ValueError(f"{self.kind.name} produces {shape}, expected {(*GRID, 1)}")

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.buffers.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.grads.items()}

    def set_tensor(self, name: str, value: np.ndarray, buffer: bool = False) -> None:
        layer_name, key = name.rsplit(".", 1)
        for layer in self.layers:
            if layer.name == layer_name:
                store = layer.buffers if buffer else layer.params
                if key not in store:
                    break
                if store[key].shape != value.shape:
                    raise ShapeMismatch(f"{name}: expected {store[key].shape}, got {value.shape}")
                store[key] = np.asarray(value, dtype=self.dtype).copy()
                return
        raise KeyError(name)

    @property
    def trainable_count(self) -> int:
        return sum(v.size for v in self.parameters().values())

    @property
    def non_trainable_count(self) -> int:
        return sum(v.size for v in self.buffers().values())

    def astype(self, dtype) -> "Network":
        """Convert parameters and buffers in place; returns self."""
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            layer.astype(self.dtype)
        if self.optimizer_state is not None:
            for key in ("m", "v"):
                self.optimizer_state[key] = {
                    k: a.astype(self.dtype) for k, a in self.optimizer_state[key].items()}
        if self.fusion is not None:
            self.fusion = self.fusion.astype(self.dtype)
        return self

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def summary(self) -> str:
        lines = [f"{self.kind.name} ({self.trainable_count} trainable, "
                 f"{self.non_trainable_count} non-trainable)"]
        for layer in self.layers:
            n = sum(v.size for v in layer.params.values())
            lines.append(f"  {layer.name:<16} {n:>8}")
        return "\n".join(lines)

    # -- evaluation ----------------------------------------------------------

    def _prepare(self, x):
        if self.multi_input:
            if not isinstance(x, (tuple, list)) or len(x) != len(self.input_shape):
                raise ShapeMismatch(f"{self.kind.name} expects {len(self.input_shape)} inputs")
            arrays = tuple(np.asarray(a, dtype=self.dtype) for a in x)
            for a, shape in zip(arrays, self.input_shape):
                if a.ndim != len(shape) + 1 or a.shape[1:] != shape:
                    raise ShapeMismatch(f"{self.kind.name} input {a.shape} != (N, {shape})")
            if len({a.shape[0] for a in arrays}) != 1:
                raise ShapeMismatch("inputs disagree on batch size")
            return arrays
        a = np.asarray(x, dtype=self.dtype)
        if a.ndim != len(self.input_shape) + 1 or a.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatch(
                f"{self.kind.name} expects (N, {', '.join(map(str, self.input_shape))}), "
                f"got {a.shape}")
        return a[..., None]

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None,
                dropout: bool = True) -> np.ndarray:
        """Run a batch; returns ``(N, 80, 28)``.

        Dropout is applied only when ``training`` and ``dropout`` are both set;
        it draws from ``rng`` (a generator seeded from ``rng_seed`` if omitted).
        Batch-norm uses batch statistics when ``training`` and updates its
        moving averages.
        """
        h = self._prepare(x)
        if training and dropout and rng is None:
            rng = np.random.default_rng(self.rng_seed)
        for layer in self.layers:
            h = layer.forward(h, training, rng if (training and dropout) else None)
        return h[..., 0]

    __call__ = forward

    def backward(self, dy: np.ndarray, input_grad: bool = False):
        """Back-propagate ``dL/d(output)``; parameter gradients land in the layers."""
        g = np.asarray(dy, dtype=self.dtype)[..., None]
        # Layers below the first parametrised one need no gradient unless asked.
        first = 0 if input_grad else next(i for i, l in enumerate(self.layers) if l.params)
        for i in range(len(self.layers) - 1, first - 1, -1):
            g = self.layers[i].backward(g, need_dx=(i > first or input_grad))
        for layer in self.layers[:first]:
            layer._cache = None
        if not input_grad:
            return None
        return g[..., 0] if not self.multi_input else g

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """Inference-mode forward in batches."""
        n = (x[0] if self.multi_input else x).shape[0]
        outs = []
        for i in range(0, n, batch_size):
            sl = slice(i, i + batch_size)
            xb = tuple(a[sl] for a in x) if self.multi_input else x[sl]
            outs.append(self.forward(xb, training=False))
        if not outs:
            return np.zeros((0, *GRID), dtype=self.dtype)
        return np.concatenate(outs)


# -- builders ----------------------------------------------------------------

def _temporal_pose_trunk(rng, joints, dropout):
    return [
        Conv("00_conv3d", 1, 32, (3, 3, 3), rng, pad=(0, 1, 1), bias=False),
        BatchNorm("01_batchnorm", 32),
        ReLU("02_relu"),
        Dropout("03_dropout", dropout),
        Conv("04_conv3d", 32, 16, (8, 1, 3), rng, pad=(0, 0, 0), collapse=True, bias=False),
        BatchNorm("05_batchnorm", 16),
        ReLU("06_relu"),
        Dropout("07_dropout", dropout),
        Flatten("08_flatten"),
    ]


def _tpn(rng, joints, dropout):
    return _temporal_pose_trunk(rng, joints, dropout) + [
        Dense("09_dense", joints * 16, GRID[0] // 2, rng, out_shape=(GRID[0] // 2, 1, 1)),
        UpsampleNearest("10_upsample", (2, GRID[1])),
        Conv("11_conv2d", 1, 1, (3, 3), rng),
    ]


def _baseline(rng, joints, dropout):
    return _temporal_pose_trunk(rng, joints, dropout) + [
        Dense("09_dense", joints * 16, GRID[0] // 2, rng),
        ReLU("10_relu"),
        Dense("11_dense", GRID[0] // 2, 256, rng),
        ReLU("12_relu"),
        Dense("13_dense", 256, GRID[0] * GRID[1], rng, out_shape=(*GRID, 1)),
        Conv("14_conv2d", 1, 1, (3, 3), rng),
        ReLU("15_relu"),
    ]


def _tdn(rng, joints, dropout):
    return [
        Conv("00_conv3d", 1, 8, (3, 3, 3), rng, pad=(0, 1, 1), bias=False),
        BatchNorm("01_batchnorm", 8),
        ReLU("02_relu"),
        Dropout("03_dropout", dropout),
        Conv("04_conv3d", 8, 88, (8, 1, 1), rng, pad=(0, 0, 0), collapse=True, bias=False),
        BatchNorm("05_batchnorm", 88),
        ReLU("06_relu"),
        Dropout("07_dropout", dropout),
        Conv("08_conv2d", 88, 10, (3, 3), rng),
        ReLU("09_relu"),
        Conv("10_conv2d", 10, 1, (5, 5), rng),
    ]


def _psn(rng, joints, dropout):
    return [
        ConcatInputs("00_concat", 2),
        Conv("01_conv2d", 2, 32, (7, 7), rng, bias=False),
        BatchNorm("02_batchnorm", 32),
        ReLU("03_relu"),
        Conv("04_conv2d", 32, 16, (3, 3), rng, bias=False),
        BatchNorm("05_batchnorm", 16),
        ReLU("06_relu"),
        Conv("07_conv2d", 16, 1, (7, 7), rng),
        ReLU("08_relu"),
    ]


_BUILDERS = {NetworkKind.TPN: _tpn, NetworkKind.TDN: _tdn,
             NetworkKind.PSN: _psn, NetworkKind.BASELINE: _baseline}


def input_shape_for(kind: NetworkKind, joints: int = 17):
    kind = NetworkKind.parse(kind)
    if kind in (NetworkKind.TPN, NetworkKind.BASELINE):
        return (WINDOW, joints, 3)
    if kind is NetworkKind.TDN:
        return (WINDOW, *GRID)
    return (GRID, GRID)


def build_model(kind, seed: int = 0, joints: int = 17, dropout: float = DROPOUT_RATE,
                dtype=np.float32) -> Network:
    """Build a freshly initialised network.

    Weights are drawn (in float64, then cast) from ``default_rng(seed)`` in
    layer order with a fan-in scaled uniform; biases start at zero. The final
    layer's kernel is scaled by ``HEAD_GAIN``.
    """
    kind = NetworkKind.parse(kind)
    if joints not in (17, 25):
        raise ValueError(f"joints must be 17 or 25, got {joints}")
    rng = np.random.default_rng(seed)
    layers = _BUILDERS[kind](rng, joints, dropout)
    head = [l for l in layers if l.params][-1]
    head.params["kernel"] = head.params["kernel"] * HEAD_GAIN
    return Network(kind, layers, input_shape_for(kind, joints), seed, dtype)
