"""Tensors, reproducible random numbers, metrics and the ``.ct`` file format.

Images, cines, k-space and coefficient arrays are plain ``numpy`` arrays of
dtype ``complex128`` (the "complex tensor" everywhere in this package).  The
helpers here validate them at module boundaries, move them to and from the
real-isomorphic space ``[re; im]`` and serialize them bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from os import PathLike
from typing import BinaryIO, Union

import numba
import numpy as np

__all__ = [
    "NumericalError",
    "TensorFormatError",
    "TensorHeaderError",
    "TruncatedPayloadError",
    "PayloadSizeError",
    "Rng",
    "Metrics",
    "as_tensor",
    "check_finite",
    "to_real",
    "from_real",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "write_tensor",
    "read_tensor",
    "rsnr",
]

PathType = Union[str, PathLike]


class NumericalError(RuntimeError):
    """A solver produced a non-finite iterate or otherwise broke down."""


class TensorFormatError(ValueError):
    """Base class for ``.ct`` decoding failures."""


class TensorHeaderError(TensorFormatError):
    """The JSON header line is missing, unparsable or inconsistent."""


class TruncatedPayloadError(TensorFormatError):
    """Fewer payload bytes than the header declares."""


class PayloadSizeError(TensorFormatError):
    """More payload bytes than the header declares (or a partial value)."""


# --------------------------------------------------------------------------
# tensors
# --------------------------------------------------------------------------


def as_tensor(a, name: str = "tensor") -> np.ndarray:
    """Return ``a`` as a C-contiguous complex128 array, rejecting NaN/Inf."""
    t = np.ascontiguousarray(a, dtype=np.complex128)
    if t.ndim == 0:
        raise ValueError(f"{name} must have at least one dimension")
    check_finite(t, name)
    return t


def check_finite(a: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name} contains NaN or Inf")


def to_real(z: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts into one real vector of length 2N."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return np.concatenate([z.real.ravel(), z.imag.ravel()])
    return np.concatenate([z.ravel().astype(np.float64), np.zeros(z.size)])


def from_real(v: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`to_real`."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size // 2
    return (v[:n] + 1j * v[n:]).reshape(shape)


# --------------------------------------------------------------------------
# xoshiro256** seeded by splitmix64
# --------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def _splitmix64(x: int):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@numba.njit(cache=True)
def _fill_u64(s, out):
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    five = np.uint64(5)
    nine = np.uint64(9)
    for i in range(out.shape[0]):
        out[i] = _rotl(s1 * five, np.uint64(7)) * nine
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, np.uint64(45))
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3


class Rng:
    """xoshiro256** generator; the 256-bit state is four splitmix64 outputs.

    The raw 64-bit stream is portable by construction.  Doubles use the top
    53 bits, normals use Box-Muller on pairs of doubles, so every derived
    sequence is a fixed function of the raw stream.

    Single-owner: do not share an instance across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        x = self.seed
        words = []
        for _ in range(4):
            x, w = _splitmix64(x)
            words.append(w)
        self._s = np.array(words, dtype=np.uint64)

    @property
    def state(self) -> tuple:
        return tuple(int(w) for w in self._s)

    def next_u64(self) -> int:
        out = np.empty(1, dtype=np.uint64)
        _fill_u64(self._s, out)
        return int(out[0])

    def integers_u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        _fill_u64(self._s, out)
        return out

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.integers_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def standard_normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        m = (n + 1) // 2
        u = self.random(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        g = np.empty(2 * m)
        g[0::2] = r * np.cos(theta)
        g[1::2] = r * np.sin(theta)
        return g[:n].reshape(size)

    def complex_normal(self, size) -> np.ndarray:
        """Circularly symmetric complex Gaussian with unit variance per entry."""
        n = int(np.prod(size))
        g = self.standard_normal(2 * n)
        return ((g[0::2] + 1j * g[1::2]) / math.sqrt(2.0)).reshape(size)

    def spawn(self) -> "Rng":
        """Child generator seeded from the next raw output."""
        return Rng(self.next_u64())


# --------------------------------------------------------------------------
# file format
# --------------------------------------------------------------------------


def _header(shape) -> bytes:
    h = {"dtype": "c128", "order": "row-major", "shape": [int(s) for s in shape]}
    return (json.dumps(h, separators=(",", ":")) + "\n").encode("utf-8")


def tensor_to_bytes(t) -> bytes:
    t = as_tensor(t)
    return _header(t.shape) + np.ascontiguousarray(t, dtype="<c16").tobytes()


def _parse_header(line: bytes) -> tuple:
    try:
        h = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorHeaderError(f"unparsable header: {exc}") from None
    if not isinstance(h, dict):
        raise TensorHeaderError("header is not a JSON object")
    if h.get("dtype") != "c128" or h.get("order") != "row-major":
        raise TensorHeaderError(f"unsupported dtype/order {h.get('dtype')!r}/{h.get('order')!r}")
    shape = h.get("shape")
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in shape)
    ):
        raise TensorHeaderError(f"shape must be a non-empty list of positive integers, got {shape!r}")
    return tuple(shape)


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    nl = buf.find(b"\n")
    if nl < 0:
        raise TensorHeaderError("no header line terminator")
    shape = _parse_header(buf[:nl])
    payload = memoryview(buf)[nl + 1 :]
    need = 16 * int(np.prod(shape))
    if len(payload) < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, got {len(payload)}")
    if len(payload) > need:
        raise PayloadSizeError(f"{len(payload) - need} trailing bytes after declared payload")
    return np.frombuffer(payload, dtype="<c16").astype(np.complex128).reshape(shape)


def read_stream(f: BinaryIO) -> np.ndarray:
    """Read exactly one tensor from a binary stream, leaving the rest unread."""
    line = f.readline()
    if not line.endswith(b"\n"):
        raise TensorHeaderError("no header line terminator")
    shape = _parse_header(line[:-1])
    need = 16 * int(np.prod(shape))
    chunks = []
    got = 0
    while got < need:
        c = f.read(need - got)
        if not c:
            break
        chunks.append(c)
        got += len(c)
    if got < need:
        raise TruncatedPayloadError(f"expected {need} payload bytes, got {got}")
    return np.frombuffer(b"".join(chunks), dtype="<c16").astype(np.complex128).reshape(shape)


def write_tensor(t, path: PathType) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def read_tensor(path: PathType) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


def write_stream(t, f: BinaryIO) -> None:
    f.write(tensor_to_bytes(t))
    if hasattr(f, "flush"):
        f.flush()


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    rsnr_db: float
    nmse_db: float


def rsnr(x, xhat) -> Metrics:
    """Reconstruction SNR ``||x||^2 / ||xhat - x||^2`` in dB.

    An exact match returns ``rsnr_db = +inf`` rather than raising.
    """
    x = np.asarray(x)
    xhat = np.asarray(xhat)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xhat.shape}")
    num = float(np.vdot(x, x).real)
    if num <= 0:
        raise ValueError("reference has zero norm")
    err = float(np.vdot(xhat - x, xhat - x).real)
    if err == 0.0:
        return Metrics(math.inf, -math.inf)
    db = 10.0 * math.log10(num / err)
    return Metrics(db, -db)
