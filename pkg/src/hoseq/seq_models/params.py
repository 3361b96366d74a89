"""Predictor parameter container, seeded initialisation and the HOSQ1 binary format.

Row-vector convention throughout: a layer computes ``x @ W + b`` with ``W`` of
shape (in, out).

Binary layout (all little-endian)::

    b"HOSQ1"                      magic
    u8   kind                     0 = GRU, 1 = LSTM, 2 = TRANSFORMER
    u32  input_dim, hidden_dim, seq_len, n_heads
    f64* tensors, row-major, in TENSOR_ORDER[kind] order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

MAGIC = b"HOSQ1"
N_HEADS = 2


class ModelKind(str, Enum):
    GRU = "GRU"
    LSTM = "LSTM"
    TRANSFORMER = "TRANSFORMER"


_KIND_CODE = {ModelKind.GRU: 0, ModelKind.LSTM: 1, ModelKind.TRANSFORMER: 2}

HEAD = ("head_W", "head_b")
TENSOR_ORDER = {
    ModelKind.GRU: ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h") + HEAD,
    # gate blocks along the last axis: input, forget, cell candidate, output
    ModelKind.LSTM: ("W", "U", "b") + HEAD,
    ModelKind.TRANSFORMER: (
        "W_in", "b_in", "pos", "W_q", "W_k", "W_v", "W_o", "b_o",
        "W_1", "b_1", "W_2", "b_2",
    ) + HEAD,
}


def tensor_shapes(kind: ModelKind, f: int, h: int, seq_len: int) -> dict[str, tuple[int, ...]]:
    kind = ModelKind(kind)
    if kind is ModelKind.GRU:
        shapes = {}
        for g in "zrh":
            shapes[f"W_{g}"] = (f, h)
            shapes[f"U_{g}"] = (h, h)
            shapes[f"b_{g}"] = (h,)
    elif kind is ModelKind.LSTM:
        shapes = {"W": (f, 4 * h), "U": (h, 4 * h), "b": (4 * h,)}
    else:
        ff = 2 * h
        shapes = {
            "W_in": (f, h), "b_in": (h,), "pos": (seq_len, h),
            "W_q": (h, h), "W_k": (h, h), "W_v": (h, h), "W_o": (h, h), "b_o": (h,),
            "W_1": (h, ff), "b_1": (ff,), "W_2": (ff, h), "b_2": (h,),
        }
    shapes["head_W"] = (h, 2)
    shapes["head_b"] = (2,)
    return {name: shapes[name] for name in TENSOR_ORDER[kind]}


@dataclass(eq=False)
class PredictorParams:
    """Weights of one sequence model plus its two-output head (log1p ToS, ping-pong logit)."""

    kind: ModelKind
    input_dim: int
    hidden_dim: int
    seq_len: int
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.kind is ModelKind.TRANSFORMER and self.hidden_dim % N_HEADS:
            raise ValueError(f"transformer hidden_dim must be divisible by {N_HEADS}")
        expected = tensor_shapes(self.kind, self.input_dim, self.hidden_dim, self.seq_len)
        if set(expected) != set(self.tensors):
            raise ValueError("tensor names do not match the model kind")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @property
    def param_count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.kind, self.input_dim, self.hidden_dim, self.seq_len,
                               {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors.values())

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<B4I", _KIND_CODE[self.kind], self.input_dim,
                                    self.hidden_dim, self.seq_len, N_HEADS)]
        for name in TENSOR_ORDER[self.kind]:
            parts.append(np.ascontiguousarray(self.tensors[name], dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PredictorParams":
        if blob[:5] != MAGIC:
            raise ValueError("not a HOSQ1 parameter file")
        code, f, h, seq_len, heads = struct.unpack_from("<B4I", blob, 5)
        if heads != N_HEADS:
            raise ValueError(f"unsupported head count {heads}")
        kind = {v: k for k, v in _KIND_CODE.items()}[code]
        off = 5 + struct.calcsize("<B4I")
        tensors = {}
        for name, shape in tensor_shapes(kind, f, h, seq_len).items():
            n = int(np.prod(shape))
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
            off += 8 * n
        if off != len(blob):
            raise ValueError("trailing bytes in parameter file")
        return cls(kind, f, h, seq_len, tensors)


def init_params(kind: ModelKind | str, input_dim: int, hidden_dim: int, seq_len: int,
                rng: np.random.Generator) -> PredictorParams:
    """Every tensor drawn from uniform(-a, a), a = 1/sqrt(hidden_dim)."""
    a = 1.0 / np.sqrt(hidden_dim)
    shapes = tensor_shapes(ModelKind(kind), input_dim, hidden_dim, seq_len)
    tensors = {name: rng.uniform(-a, a, size=shape) for name, shape in shapes.items()}
    return PredictorParams(ModelKind(kind), input_dim, hidden_dim, seq_len, tensors)


def zero_params(kind: ModelKind | str, input_dim: int, hidden_dim: int, seq_len: int) -> PredictorParams:
    shapes = tensor_shapes(ModelKind(kind), input_dim, hidden_dim, seq_len)
    return PredictorParams(ModelKind(kind), input_dim, hidden_dim, seq_len,
                           {n: np.zeros(s) for n, s in shapes.items()})
