"""Layers with hand-written forward and backward passes.

Tensors are channels-last numpy arrays: ``(N, D, H, W, C)`` for temporal
volumes and ``(N, H, W, C)`` for grids. Every layer caches what it needs
during ``forward`` and consumes it in ``backward``; parameter gradients are
written to ``layer.grads`` (overwritten, not accumulated).
"""
from __future__ import annotations

import itertools
import math

import numpy as np

# Soft cap on patch-matrix size (elements) per chunk of the batch.
_COLS_BUDGET = 1 << 23


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training: bool, rng: np.random.Generator | None):
        raise NotImplementedError

    def backward(self, dy, need_dx: bool = True):
        raise NotImplementedError

    def output_shape(self, shape):
        """Per-sample output shape for a per-sample input shape."""
        raise NotImplementedError

    def astype(self, dtype):
        for store in (self.params, self.buffers):
            for key in store:
                store[key] = store[key].astype(dtype)
        self.grads = {}
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv(Layer):
    """Stride-1 convolution over 2 or 3 spatial axes (patch matrix + matmul).

    ``pad`` gives symmetric zero padding per spatial axis. With
    ``collapse=True`` a leading spatial axis of output size 1 is dropped,
    turning a temporal 3-D convolution into a 2-D feature map. Convolutions
    that feed batch-norm are built with ``bias=False``: the normalisation
    removes any per-channel offset, so such a bias would never train.
    """

    def __init__(self, name, cin, cout, kernel, rng, pad=None, collapse=False, bias=True):
        super().__init__(name)
        self.kernel = tuple(int(k) for k in kernel)
        self.nd = len(self.kernel)
        self.kind = f"conv{self.nd}d"
        self.cin, self.cout = int(cin), int(cout)
        self.pad = tuple(pad) if pad is not None else tuple(k // 2 for k in self.kernel)
        self.collapse = collapse
        fan_in = self.cin * math.prod(self.kernel)
        self.params["kernel"] = he_uniform(rng, (*self.kernel, self.cin, self.cout), fan_in)
        if bias:
            self.params["bias"] = np.zeros(self.cout)

    def output_shape(self, shape):
        spatial, c = shape[:-1], shape[-1]
        if len(spatial) != self.nd or c != self.cin:
            raise ValueError(f"{self.name}: cannot take input {shape}")
        out = tuple(s + 2 * p - k + 1 for s, p, k in zip(spatial, self.pad, self.kernel))
        if min(out) < 1:
            raise ValueError(f"{self.name}: kernel larger than padded input {shape}")
        if self.collapse:
            if out[0] != 1:
                raise ValueError(f"{self.name}: collapse needs a unit leading axis, got {out}")
            out = out[1:]
        return (*out, self.cout)

    def _matrix(self):
        return self.params["kernel"].reshape(-1, self.cout)

    def _offsets(self):
        return list(itertools.product(*(range(k) for k in self.kernel)))

    def _chunk(self, n, out_spatial):
        per_sample = math.prod(out_spatial) * self.cin * math.prod(self.kernel)
        return max(1, min(n, _COLS_BUDGET // max(per_sample, 1)))

    def _cols_t(self, xt, out_spatial):
        """Transposed patch matrix ``(K * cin, positions)`` from a channels-first input.

        Rows are ordered (kernel offset, input channel), matching the kernel's
        ``(*k, cin, cout)`` layout, so every row copy is a contiguous plane.
        """
        n = xt.shape[1]
        offsets = self._offsets()
        cols = np.empty((len(offsets), self.cin, n, *out_spatial), dtype=xt.dtype)
        for j, offs in enumerate(offsets):
            cols[j] = xt[(slice(None), slice(None)) + _window(offs, out_spatial)]
        return cols.reshape(len(offsets) * self.cin, -1)

    def forward(self, x, training, rng):
        pad = [(0, 0)] + [(p, p) for p in self.pad] + [(0, 0)]
        xp = np.pad(x, pad) if any(self.pad) else np.ascontiguousarray(x)
        out_spatial = tuple(s - k + 1 for s, k in zip(xp.shape[1:-1], self.kernel))
        if self.cout < self.cin:
            y = self._forward_shift(xp, out_spatial)
            self._cache = ("shift", xp, x.shape, out_spatial)
        else:
            xt = np.ascontiguousarray(np.moveaxis(xp, -1, 0))  # (cin, n, *spatial)
            y = self._forward_patch(xt, out_spatial)
            self._cache = ("patch", xt, x.shape, out_spatial)
        return y[:, 0] if self.collapse else y

    def _forward_patch(self, xt, out_spatial):
        n = xt.shape[1]
        wm, b = self._matrix(), self.params.get("bias", 0)
        y = np.empty((n, *out_spatial, self.cout), dtype=xt.dtype)
        step = self._chunk(n, out_spatial)
        for i in range(0, n, step):
            cols = self._cols_t(xt[:, i:i + step], out_spatial)
            y[i:i + step] = (cols.T @ wm + b).reshape(-1, *out_spatial, self.cout)
        return y

    def _taps(self):
        """Kernel as ``(cin, K * cout)``: every tap applied in one product."""
        k = self.params["kernel"].reshape(-1, self.cin, self.cout)
        return np.moveaxis(k, 1, 0).reshape(self.cin, -1)

    def _forward_shift(self, xp, out_spatial):
        # Narrow outputs: apply all taps at every padded position, then shift-add.
        n, padded = xp.shape[0], xp.shape[1:-1]
        taps = self._taps()
        y = np.empty((n, *out_spatial, self.cout), dtype=xp.dtype)
        step = max(1, min(n, _COLS_BUDGET // max(1, math.prod(padded) * taps.shape[1])))
        for i in range(0, n, step):
            z = (xp[i:i + step].reshape(-1, self.cin) @ taps).reshape(
                -1, *padded, len(self._offsets()), self.cout)
            acc = np.zeros((z.shape[0], *out_spatial, self.cout), dtype=xp.dtype)
            for j, offs in enumerate(self._offsets()):
                acc += z[(slice(None),) + _window(offs, out_spatial) + (j,)]
            y[i:i + step] = acc + self.params.get("bias", 0)
        return y

    def backward(self, dy, need_dx=True):
        mode, src, xshape, out_spatial = self._cache
        self._cache = None
        if self.collapse:
            dy = dy[:, None]
        if mode == "shift":
            dxp = self._backward_shift(src, dy, out_spatial, need_dx)
        else:
            dxp = self._backward_patch(src, dy, out_spatial, need_dx)
        if "bias" in self.params:
            self.grads["bias"] = dy.reshape(-1, self.cout).sum(axis=0)
        if not need_dx:
            return None
        crop = (slice(None),) + tuple(slice(p, p + s) for p, s in zip(self.pad, xshape[1:-1]))
        return dxp[crop]

    def _backward_patch(self, xt, dy, out_spatial, need_dx):
        n = xt.shape[1]
        dwm = np.zeros_like(self._matrix())
        dxt = np.zeros_like(xt) if need_dx else None
        step = self._chunk(n, out_spatial)
        wk = self.params["kernel"].reshape(-1, self.cin, self.cout)
        for i in range(0, n, step):
            cols = self._cols_t(xt[:, i:i + step], out_spatial)
            dyc = dy[i:i + step].reshape(-1, self.cout)
            dwm += cols @ dyc
            del cols
            if need_dx:
                target = dxt[:, i:i + step]
                for j, offs in enumerate(self._offsets()):
                    contrib = (wk[j] @ dyc.T).reshape(self.cin, -1, *out_spatial)
                    target[(slice(None), slice(None)) + _window(offs, out_spatial)] += contrib
        self.grads["kernel"] = dwm.reshape(self.params["kernel"].shape)
        return np.moveaxis(dxt, 0, -1) if need_dx else None

    def _backward_shift(self, xp, dy, out_spatial, need_dx):
        n, padded = xp.shape[0], xp.shape[1:-1]
        taps = self._taps()
        ntap = len(self._offsets())
        dtaps = np.zeros_like(taps)
        dxp = np.empty_like(xp) if need_dx else None
        step = max(1, min(n, _COLS_BUDGET // max(1, math.prod(padded) * taps.shape[1])))
        for i in range(0, n, step):
            dyc = dy[i:i + step]
            # Scatter the output gradient back to the padded position of every tap.
            d = np.zeros((dyc.shape[0], *padded, ntap, self.cout), dtype=xp.dtype)
            for j, offs in enumerate(self._offsets()):
                d[(slice(None),) + _window(offs, out_spatial) + (j,)] = dyc
            d = d.reshape(-1, taps.shape[1])
            dtaps += xp[i:i + step].reshape(-1, self.cin).T @ d
            if need_dx:
                dxp[i:i + step] = (d @ taps.T).reshape(-1, *padded, self.cin)
        self.grads["kernel"] = np.moveaxis(
            dtaps.reshape(self.cin, ntap, self.cout), 0, 1).reshape(self.params["kernel"].shape)
        return dxp


def _window(offsets, size):
    return tuple(slice(o, o + m) for o, m in zip(offsets, size))


class BatchNorm(Layer):
    """Per-channel normalisation over every axis but the last.

    The moving statistics are a cumulative average over the first
    ``1 / (1 - momentum)`` training batches and an exponential average after
    that, so they track the data even when training runs only a few hundred
    steps. ``updates`` counts the training batches seen.
    """

    kind = "batchnorm"

    def __init__(self, name, channels, momentum=0.99, eps=1e-3):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["moving_mean"] = np.zeros(channels)
        self.buffers["moving_var"] = np.ones(channels)
        self.updates = 0

    def output_shape(self, shape):
        if shape[-1] != self.params["gamma"].shape[0]:
            raise ValueError(f"{self.name}: channel mismatch {shape}")
        return shape

    def forward(self, x, training, rng):
        c = x.shape[-1]
        x2 = x.reshape(-1, c)
        g, b = self.params["gamma"], self.params["beta"]
        if training:
            ones = np.ones(x2.shape[0], dtype=x.dtype)
            mu = (ones @ x2) / x2.shape[0]
            xc = x2 - mu
            var = (ones @ (xc * xc)) / x2.shape[0]
            m = min(self.momentum, self.updates / (self.updates + 1.0))
            self.updates += 1
            self.buffers["moving_mean"] = m * self.buffers["moving_mean"] + (1 - m) * mu
            self.buffers["moving_var"] = m * self.buffers["moving_var"] + (1 - m) * var
        else:
            mu, var = self.buffers["moving_mean"], self.buffers["moving_var"]
            xc = x2 - mu
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = xc
        xhat *= inv
        self._cache = (xhat, inv, training)
        return (xhat * g + b).reshape(x.shape)

    def backward(self, dy, need_dx=True):
        xhat, inv, training = self._cache
        self._cache = None
        shape = dy.shape
        dy2 = dy.reshape(-1, shape[-1])
        ones = np.ones(dy2.shape[0], dtype=dy.dtype)
        g = self.params["gamma"]
        sum_dy = ones @ dy2
        sum_dy_xhat = ones @ (dy2 * xhat)
        self.grads["gamma"] = sum_dy_xhat
        self.grads["beta"] = sum_dy
        if not need_dx:
            return None
        if not training:
            return dy * (g * inv)
        m = dy2.shape[0]
        k = g * inv
        dx = dy2 - (sum_dy / m)
        dx -= xhat * (sum_dy_xhat / m)
        dx *= k
        return dx.reshape(shape)


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, shape):
        return shape

    def forward(self, x, training, rng):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, dy, need_dx=True):
        mask, self._cache = self._cache, None
        return dy * mask


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1 - rate) at train time."""

    kind = "dropout"

    def __init__(self, name, rate=0.3):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def output_shape(self, shape):
        return shape

    def forward(self, x, training, rng):
        if not training or rng is None or self.rate == 0:
            self._cache = None
            return x
        keep = rng.random(x.shape, dtype=x.dtype) >= self.rate
        scale = np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        self._cache = keep * scale
        return x * self._cache

    def backward(self, dy, need_dx=True):
        mask, self._cache = self._cache, None
        return dy if mask is None else dy * mask


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (math.prod(shape),)

    def forward(self, x, training, rng):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_dx=True):
        shape, self._cache = self._cache, None
        return dy.reshape(shape)


class Dense(Layer):
    """Fully connected layer on flat features, optionally reshaping its output."""

    kind = "dense"

    def __init__(self, name, n_in, n_out, rng, out_shape=None):
        super().__init__(name)
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.out_shape = tuple(out_shape) if out_shape is not None else (self.n_out,)
        if math.prod(self.out_shape) != self.n_out:
            raise ValueError(f"{name}: out_shape {out_shape} does not hold {n_out} units")
        self.params["kernel"] = he_uniform(rng, (self.n_in, self.n_out), self.n_in)
        self.params["bias"] = np.zeros(self.n_out)

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError(f"{self.name}: expected ({self.n_in},), got {shape}")
        return self.out_shape

    def forward(self, x, training, rng):
        self._cache = x
        y = x @ self.params["kernel"] + self.params["bias"]
        return y.reshape(x.shape[0], *self.out_shape)

    def backward(self, dy, need_dx=True):
        x, self._cache = self._cache, None
        dy = dy.reshape(dy.shape[0], self.n_out)
        self.grads["kernel"] = x.T @ dy
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["kernel"].T if need_dx else None


class UpsampleNearest(Layer):
    kind = "upsample"

    def __init__(self, name, factors):
        super().__init__(name)
        self.factors = tuple(int(f) for f in factors)

    def output_shape(self, shape):
        *spatial, c = shape
        return (*(s * f for s, f in zip(spatial, self.factors)), c)

    def forward(self, x, training, rng):
        y = x
        for axis, f in enumerate(self.factors, start=1):
            y = np.repeat(y, f, axis=axis)
        return y

    def backward(self, dy, need_dx=True):
        n, *spatial, c = dy.shape
        split = [n]
        for s, f in zip(spatial, self.factors):
            split += [s // f, f]
        summed = dy.reshape(*split, c).sum(axis=tuple(range(2, 2 * len(spatial) + 1, 2)))
        return summed


class ConcatInputs(Layer):
    """Stack several equally shaped inputs as channels."""

    kind = "concat"

    def __init__(self, name, count):
        super().__init__(name)
        self.count = count

    def output_shape(self, shapes):
        if len(shapes) != self.count or len(set(shapes)) != 1:
            raise ValueError(f"{self.name}: expected {self.count} equal shapes, got {shapes}")
        return (*shapes[0], self.count)

    def forward(self, xs, training, rng):
        return np.stack(xs, axis=-1)

    def backward(self, dy, need_dx=True):
        return tuple(dy[..., i] for i in range(self.count)) if need_dx else None
