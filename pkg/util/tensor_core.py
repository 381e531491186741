"""
Dense float32 tensors, the pinned RNG and the RNTZ binary codec.

Storage is float32, row-major; reductions and products accumulate in float64 and are
rounded back to float32 on the way out.

RNG: Philox4x64 counter-based bit generator keyed by numpy's SeedSequence(seed,
spawn_key=stream). A child stream is (seed, stream + (index,)), so work split over
threads draws the same numbers regardless of scheduling.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable

import numpy as np

from util.errors import ShapeMismatchError, TensorFormatError

MAGIC = b"RNTZ"
FORMAT_VERSION = 1
DTYPE_F32 = 0
MAX_RANK = 16
MAX_ELEMENTS = 1 << 31

_HEADER = struct.Struct("<4sIII")


class Tensor:
    """Immutable dense tensor. `data` is a read-only float32 ndarray."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor 只允许有限值（不含 NaN/Inf）")
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"Tensor 维度必须为正：{arr.shape}")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, shape) -> Tensor:
        return cls(np.zeros(tuple(shape), dtype=np.float32))

    @classmethod
    def scalar(cls, value: float) -> Tensor:
        return cls(np.float32(value))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self._data.shape)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self, dtype=np.float64) -> np.ndarray:
        return self._data.astype(dtype)

    def to_list(self):
        return self._data.tolist()

    def reshape(self, shape) -> Tensor:
        return Tensor(self._data.reshape(tuple(shape)))

    def bit_equal(self, other: Tensor) -> bool:
        return self.shape == other.shape and self._data.tobytes() == other._data.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.bit_equal(other)

    def __hash__(self) -> int:
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self._data, threshold=8)})"


_OPS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "scale": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Tensor | float) -> Tensor:
    if op not in _OPS:
        raise ValueError(f"不支持的逐元素运算：{op}")
    lhs = a.numpy()
    if isinstance(b, Tensor):
        if op == "scale":
            raise ValueError("scale 的第二个参数必须是标量")
        if b.shape != a.shape:
            raise ShapeMismatchError(a.shape, b.shape)
        rhs = b.numpy()
    else:
        rhs = np.float64(b)
    return Tensor(_OPS[op](lhs, rhs))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ValueError(f"matmul 需要二维张量，得到 rank {a.rank} 与 rank {b.rank}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(a.shape, b.shape, what="matmul inner dimension")
    return Tensor(a.numpy() @ b.numpy())


def write_tensor(t: Tensor, sink: BinaryIO) -> None:
    sink.write(_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32, t.rank))
    if t.rank:
        sink.write(struct.pack(f"<{t.rank}I", *t.shape))
    sink.write(t.data.astype("<f4").tobytes(order="C"))


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise TensorFormatError(f"truncated stream while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(source: BinaryIO) -> Tensor:
    magic, version, dtype, rank = _HEADER.unpack(_read_exact(source, _HEADER.size, "header"))
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}")
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype}")
    if rank > MAX_RANK:
        raise TensorFormatError(f"dimension overflow: rank {rank} > {MAX_RANK}")
    dims = struct.unpack(f"<{rank}I", _read_exact(source, 4 * rank, "dims")) if rank else ()
    count = 1
    for d in dims:
        if d == 0:
            raise TensorFormatError(f"zero-sized dimension in {dims}")
        count *= d
        if count > MAX_ELEMENTS:
            raise TensorFormatError(f"dimension overflow: {dims}")
    payload = _read_exact(source, 4 * count, "payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    try:
        return Tensor(arr)
    except ValueError as e:
        raise TensorFormatError(str(e)) from e


class Rng:
    """Single-owner random stream; use child() to hand streams to parallel work."""

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed 必须是 64 位无符号整数：{seed}")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(seed, spawn_key=self.stream))
        )

    def child(self, index: int) -> Rng:
        return Rng(self.seed, (*self.stream, index))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"
