"""Binary checkpoints for models and optimizer state.

Layout (all integers little-endian, arrays float64 little-endian in C order):

    8 bytes   magic + format version, b"ADFCKPT1"
    u8        activation code (0 = tanh, 1 = relu)
    u32       number of layers
    per layer:
        u32 n, u32 k, u32 r, f64 scale
        f64[n*k] w0, f64[r*n] u, f64[r*k] v, f64[k] bias
    optional optimizer section:
        4 bytes marker b"OPT1", u32 entry count
        per entry: u16 name length, utf-8 name, u8 kind, then
            kind 0 (gram):  u64 t, u32 rows, u32 cols, f64[] m, u32 hr, f64[] h
            kind 1 (adamw): u64 t, u8 ndim, u32[] dims, f64[] m, f64[] v
            kind 2 (sgd):   u8 ndim, u32[] dims, f64[] m
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ACTIVATIONS, LoraLinear, MlpModel
from .optim import AdaFishState, AdamWState, MomentumState

MAGIC = b"ADFCKPT1"

_KIND_CODES = {"gram": 0, "adamw": 1, "sgd": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class CheckpointError(ValueError):
    pass


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, *shape: int) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 0
        raw = np.frombuffer(self.take(count * 8), dtype="<f8").astype(np.float64)
        return raw.reshape(shape)

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def save_checkpoint(path, model: MlpModel, optimizer_states: dict | None = None) -> None:
    chunks = [MAGIC, struct.pack("<BI", ACTIVATIONS.index(model.activation), len(model.layers))]
    for layer, bias in zip(model.layers, model.biases):
        n, k = layer.w0.shape
        r = layer.rank
        chunks.append(struct.pack("<IIId", n, k, r, layer.scale))
        chunks.extend(_pack_array(a) for a in (layer.w0, layer.u, layer.v, bias))
    if optimizer_states is not None:
        chunks.append(b"OPT1" + struct.pack("<I", len(optimizer_states)))
        for name in sorted(optimizer_states):
            kind, state = optimizer_states[name]
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded)) + encoded)
            chunks.append(struct.pack("<B", _KIND_CODES[kind]))
            if kind == "gram":
                chunks.append(struct.pack("<QII", state.t, *state.m.shape))
                chunks.append(_pack_array(state.m))
                chunks.append(struct.pack("<I", state.h.shape[0]))
                chunks.append(_pack_array(state.h))
            elif kind == "adamw":
                chunks.append(struct.pack("<QB", state.t, state.m.ndim))
                chunks.append(struct.pack(f"<{state.m.ndim}I", *state.m.shape))
                chunks.append(_pack_array(state.m) + _pack_array(state.v))
            else:
                chunks.append(struct.pack("<B", state.m.ndim))
                chunks.append(struct.pack(f"<{state.m.ndim}I", *state.m.shape))
                chunks.append(_pack_array(state.m))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[MlpModel, dict | None]:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(8) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint of this format")
    act_code, n_layers = reader.unpack("BI")
    if act_code >= len(ACTIVATIONS):
        raise CheckpointError(f"{path}: unknown activation code {act_code}")
    layers, biases = [], []
    for _ in range(n_layers):
        n, k, r, scale = reader.unpack("IIId")
        w0 = reader.array(n, k)
        u = reader.array(r, n)
        v = reader.array(r, k)
        biases.append(reader.array(k).reshape(-1))
        layers.append(LoraLinear(w0=w0, u=u, v=v, scale=scale))
    model = MlpModel(layers=layers, biases=biases, activation=ACTIVATIONS[act_code])
    if reader.exhausted:
        return model, None
    if reader.take(4) != b"OPT1":
        raise CheckpointError(f"{path}: bad optimizer section marker")
    (count,) = reader.unpack("I")
    states: dict[str, tuple[str, object]] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("H")
        name = reader.take(name_len).decode("utf-8")
        (code,) = reader.unpack("B")
        kind = _KIND_NAMES.get(code)
        if kind == "gram":
            t, rows, cols = reader.unpack("QII")
            m = reader.array(rows, cols)
            (hr,) = reader.unpack("I")
            states[name] = (kind, AdaFishState(m=m, h=reader.array(hr, hr), t=t))
        elif kind == "adamw":
            t, ndim = reader.unpack("QB")
            dims = reader.unpack(f"{ndim}I")
            states[name] = (kind, AdamWState(m=reader.array(*dims), v=reader.array(*dims), t=t))
        elif kind == "sgd":
            (ndim,) = reader.unpack("B")
            dims = reader.unpack(f"{ndim}I")
            states[name] = (kind, MomentumState(m=reader.array(*dims)))
        else:
            raise CheckpointError(f"{path}: unknown state kind code {code}")
    return model, states
