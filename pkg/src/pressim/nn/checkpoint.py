"""Binary network checkpoints.

Layout (little-endian)::

    b"PSNN"  u16 version  u8 kind  u32 tensor_count
    repeated tensor_count times:
        u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 values[prod(dims)]

Tensor names:

``param/<layer>.<key>``     trainable parameters
``buffer/<layer>.<key>``    batch-norm moving statistics
``stats/<layer>.updates``   training batches folded into those statistics
``adam.m/<name>``, ``adam.v/<name>``, ``adam.t``   optimiser state, if any
``fusion``                  fused-loss weights (alpha, beta), if any
``train.epoch``             completed epochs
``meta.rng_seed``           seed as four 16-bit chunks, low first
``meta.joints``             joints per pose frame
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, IoFailure, KindMismatch
from .model import Network, NetworkKind, build_model

MAGIC = b"PSNN"
VERSION = 1


def _tensors(net: Network) -> list[tuple[str, np.ndarray]]:
    out = [(f"param/{k}", v) for k, v in net.parameters().items()]
    out += [(f"buffer/{k}", v) for k, v in net.buffers().items()]
    out += [(f"stats/{layer.name}.updates", np.array([layer.updates]))
            for layer in net.layers if hasattr(layer, "updates")]
    if net.optimizer_state is not None:
        st = net.optimizer_state
        out += [(f"adam.m/{k}", v) for k, v in st["m"].items()]
        out += [(f"adam.v/{k}", v) for k, v in st["v"].items()]
        out.append(("adam.t", np.array([st["t"]])))
    if net.fusion is not None:
        out.append(("fusion", net.fusion))
    out.append(("train.epoch", np.array([net.epoch])))
    seed = net.rng_seed
    out.append(("meta.rng_seed", np.array([(seed >> (16 * i)) & 0xFFFF for i in range(4)])))
    pose_input = net.kind in (NetworkKind.TPN, NetworkKind.BASELINE)
    out.append(("meta.joints", np.array([net.input_shape[1] if pose_input else 17])))
    return out


def encode(net: Network) -> bytes:
    tensors = _tensors(net)
    parts = [MAGIC, struct.pack("<HBI", VERSION, int(net.kind), len(tensors))]
    for name, value in tensors:
        raw = name.encode("utf-8")
        value = np.asarray(value)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(net: Network, path) -> None:
    """Write ``net`` to ``path`` (values stored as float32)."""
    data = encode(net)
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as err:
        raise IoFailure(f"{path}: {err.strerror or err}") from err


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def decode(data: bytes, path="<bytes>") -> tuple[NetworkKind, dict[str, np.ndarray]]:
    r = _Reader(data, path)
    if r.raw(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a network checkpoint")
    version, kind, count = r.take("<HBI")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        kind = NetworkKind(kind)
    except ValueError:
        raise FormatError(f"{path}: unknown network kind {kind}") from None
    tensors = {}
    for _ in range(count):
        (name_len,) = r.take("<H")
        try:
            name = r.raw(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: tensor name is not UTF-8") from None
        (rank,) = r.take("<B")
        dims = r.take(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(r.raw(4 * size), dtype="<f4").reshape(dims)
        tensors[name] = values.astype(np.float32)
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return kind, tensors


def load_checkpoint(path, expected_kind=None) -> Network:
    """Rebuild the saved network; raises ``KindMismatch`` if it is not ``expected_kind``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as err:
        raise IoFailure(f"{path}: {err.strerror or err}") from err
    kind, tensors = decode(data, path)
    if expected_kind is not None and kind is not NetworkKind.parse(expected_kind):
        raise KindMismatch(f"{path}: holds a {kind.name} network, expected "
                           f"{NetworkKind.parse(expected_kind).name}")
    try:
        chunks = [int(c) for c in tensors.pop("meta.rng_seed")]
        seed = sum(c << (16 * i) for i, c in enumerate(chunks))
        joints = int(tensors.pop("meta.joints")[0])
        epoch = int(tensors.pop("train.epoch")[0])
    except KeyError as err:
        raise FormatError(f"{path}: missing tensor {err.args[0]}") from None
    net = build_model(kind, seed, joints=joints)
    net.epoch = epoch
    expected = {f"param/{k}" for k in net.parameters()} | {f"buffer/{k}" for k in net.buffers()}
    missing = expected - tensors.keys()
    if missing:
        raise FormatError(f"{path}: missing tensors {sorted(missing)[:3]}")
    state = {"m": {}, "v": {}, "t": None}
    for name, value in tensors.items():
        group, _, key = name.partition("/")
        try:
            if group == "param":
                net.set_tensor(key, value)
            elif group == "buffer":
                net.set_tensor(key, value, buffer=True)
            elif group == "stats":
                layer = next(l for l in net.layers if f"{l.name}.updates" == key
                             and hasattr(l, "updates"))
                layer.updates = int(value[0])
            elif group in ("adam.m", "adam.v"):
                state[group[-1]][key] = value.copy()
            elif name == "adam.t":
                state["t"] = int(value[0])
            elif name == "fusion":
                net.fusion = value.copy()
            else:
                raise FormatError(f"{path}: unexpected tensor {name!r}")
        except (KeyError, ValueError, StopIteration) as err:
            if isinstance(err, FormatError):
                raise
            raise FormatError(f"{path}: tensor {name!r} does not fit {kind.name}") from None
    if state["t"] is not None:
        net.optimizer_state = state
    return net
