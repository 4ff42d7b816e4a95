"""Cartesian multi-coil MRI forward model and data-fidelity operators.

Conventions
-----------
Images are ``(nx, ny, nt)``: ``nx`` is the fully sampled frequency-encode
axis, ``ny`` the undersampled phase-encode axis, ``nt`` the frame axis.
Coil maps are ``(C, nx, ny)`` and time invariant.  Measurements are stored
as ``(C, M, nt)`` with ``M = nx * L`` where ``L`` phase-encode lines are
kept per frame; the ``M`` axis is the row-major flattening of ``(nx, L)``.

The 2-D DFT is unitary (``norm="ortho"``) so that with sum-of-squares
normalized coils ``||A||_2 <= 1``.

Because only whole phase-encode lines are dropped, ``A^H A`` is block
diagonal with one ``ny x ny`` block per (frame, frequency-encode row).  The
``exact`` proximal solve uses that structure.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Rng, as_tensor, read_tensor, write_tensor

__all__ = [
    "SamplingPattern",
    "CoilMaps",
    "ForwardModel",
    "InnerSolver",
    "parse_inner",
    "apply_forward",
    "apply_adjoint",
    "grad_data",
    "data_fidelity",
    "prox_data",
    "operator_norm",
    "save_model",
    "load_model",
]


def signed_frequency(k, n):
    """Map DFT index ``k`` in ``[0, n)`` to its signed frequency."""
    k = np.asarray(k)
    return np.where(k < (n + 1) // 2, k, k - n)


class SamplingPattern:
    """Per-frame sets of sampled phase-encode lines.

    Every frame must keep the same number of lines so that measurements
    stack into a regular ``(C, nx * L, nt)`` array.
    """

    def __init__(self, nx: int, ny: int, frames):
        self.nx = int(nx)
        self.ny = int(ny)
        rows = [np.asarray(sorted(int(i) for i in f), dtype=np.intp) for f in frames]
        if not rows:
            raise ValueError("sampling pattern needs at least one frame")
        for t, r in enumerate(rows):
            if r.size == 0:
                raise ValueError(f"frame {t} samples no lines")
            if r[0] < 0 or r[-1] >= self.ny:
                raise ValueError(f"frame {t} has line indices outside [0, {self.ny})")
            if np.any(np.diff(r) == 0):
                raise ValueError(f"frame {t} has duplicate line indices")
        if len({r.size for r in rows}) != 1:
            raise ValueError("all frames must sample the same number of lines")
        self.frames = tuple(rows)
        for r in self.frames:
            r.setflags(write=False)

    @property
    def nt(self) -> int:
        return len(self.frames)

    @property
    def lines_per_frame(self) -> int:
        return self.frames[0].size

    @property
    def M_per_frame(self) -> int:
        return self.nx * self.lines_per_frame

    def mask(self) -> np.ndarray:
        """Boolean ``(ny, nt)`` line mask."""
        m = np.zeros((self.ny, self.nt), dtype=bool)
        for t, r in enumerate(self.frames):
            m[r, t] = True
        return m

    def index_array(self) -> np.ndarray:
        return np.stack(self.frames, axis=1)

    @classmethod
    def full(cls, nx, ny, nt):
        return cls(nx, ny, [range(ny)] * nt)

    def to_json(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "nt": self.nt,
            "frames": {str(t): [int(i) for i in r] for t, r in enumerate(self.frames)},
        }

    @classmethod
    def from_json(cls, d: dict) -> "SamplingPattern":
        frames = d["frames"]
        nt = int(d.get("nt", len(frames)))
        return cls(d["nx"], d["ny"], [frames[str(t)] for t in range(nt)])

    def __eq__(self, other):
        return (
            isinstance(other, SamplingPattern)
            and (self.nx, self.ny, self.nt) == (other.nx, other.ny, other.nt)
            and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))
        )


class CoilMaps:
    """``C`` sensitivity maps of shape ``(nx, ny)`` with unit sum of squares."""

    def __init__(self, maps, tol: float = 1e-12):
        maps = as_tensor(maps, "coil maps")
        if maps.ndim == 2:
            maps = maps[None]
        if maps.ndim != 3:
            raise ValueError(f"coil maps must be (C, nx, ny), got {maps.shape}")
        sos = np.sum(np.abs(maps) ** 2, axis=0)
        dev = float(np.max(np.abs(sos - 1.0)))
        if dev > tol:
            raise ValueError(f"coil maps are not SOS-normalized (max deviation {dev:.3g})")
        maps.setflags(write=False)
        self.maps = maps

    @property
    def C(self) -> int:
        return self.maps.shape[0]

    @classmethod
    def unit(cls, nx, ny):
        return cls(np.ones((1, nx, ny), dtype=np.complex128))

    @classmethod
    def normalize(cls, raw) -> "CoilMaps":
        raw = np.asarray(raw, dtype=np.complex128)
        if raw.ndim == 2:
            raw = raw[None]
        sos = np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))
        return cls(raw / sos)


class ForwardModel:
    """The block-diagonal operator ``A`` stacking ``P^(t) F S_i``.

    Immutable after construction; the only mutable member is a memo of the
    Gram blocks, their norm and shifted inverses keyed by ``sigma2 / eta``.
    """

    def __init__(self, pattern: SamplingPattern, coils: CoilMaps, sigma2: float = 1.0):
        if coils.maps.shape[1:] != (pattern.nx, pattern.ny):
            raise ValueError(
                f"coil map grid {coils.maps.shape[1:]} does not match pattern ({pattern.nx}, {pattern.ny})"
            )
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.pattern = pattern
        self.coils = coils
        self.sigma2 = float(sigma2)
        self._idx = pattern.index_array()[None, None]  # (1, 1, L, nt)
        self._mask = pattern.mask()  # (ny, nt)
        self._S = coils.maps[..., None]  # (C, nx, ny, 1)
        self._exact_cache: dict = {}

    @property
    def dims(self):
        p = self.pattern
        return p.nx, p.ny, p.nt, self.coils.C

    @property
    def image_shape(self):
        p = self.pattern
        return (p.nx, p.ny, p.nt)

    @property
    def data_shape(self):
        p = self.pattern
        return (self.coils.C, p.M_per_frame, p.nt)

    def _check(self, a, shape, what):
        a = np.asarray(a)
        if a.shape != shape:
            raise ValueError(f"{what} shape {a.shape} does not match model {shape}")
        return a

    def forward(self, x):
        x = self._check(x, self.image_shape, "image")
        k = np.fft.fft2(self._S * x[None], axes=(1, 2), norm="ortho")
        y = np.take_along_axis(k, self._idx, axis=2)
        return y.reshape(self.data_shape)

    def adjoint(self, y):
        y = self._check(y, self.data_shape, "measurement")
        C, nx, L, nt = self.coils.C, self.pattern.nx, self.pattern.lines_per_frame, self.pattern.nt
        k = np.zeros((C, nx, self.pattern.ny, nt), dtype=np.complex128)
        np.put_along_axis(k, np.broadcast_to(self._idx, (C, nx, L, nt)), y.reshape(C, nx, L, nt), axis=2)
        img = np.fft.ifft2(k, axes=(1, 2), norm="ortho")
        return np.sum(np.conj(self._S) * img, axis=0)

    def normal(self, x):
        """``A^H A x`` without materializing the measurement layout."""
        x = self._check(x, self.image_shape, "image")
        k = np.fft.fft2(self._S * x[None], axes=(1, 2), norm="ortho")
        k *= self._mask[None, None]
        return np.sum(np.conj(self._S) * np.fft.ifft2(k, axes=(1, 2), norm="ortho"), axis=0)

    def __matmul__(self, x):
        return self.forward(x)

    def _gram_blocks(self) -> np.ndarray:
        """``ny x ny`` blocks of ``A^H A``, indexed ``[frame, row]``."""
        G = self._exact_cache.get("gram")
        if G is None:
            ny = self.pattern.ny
            F = np.fft.fft(np.eye(ny), axis=0, norm="ortho")
            # B[t] = F^H diag(m_t) F, one circulant per frame
            B = np.einsum("ka,kt,kb->tab", F.conj(), self._mask.astype(float), F)
            S = self.coils.maps  # (C, nx, ny)
            G = np.einsum("cxa,tab,cxb->txab", S.conj(), B, S)
            self._exact_cache["gram"] = G
        return G

    def _exact_inverse(self, rho: float) -> np.ndarray:
        """Inverse of each ``ny x ny`` block of ``A^H A + rho I``."""
        key = float(rho)
        inv = self._exact_cache.get(key)
        if inv is None:
            inv = np.linalg.inv(self._gram_blocks() + key * np.eye(self.pattern.ny))
            self._exact_cache[key] = inv
        return inv

    def norm(self) -> float:
        """Exact ``||A||_2`` from the eigenvalues of the Gram blocks."""
        val = self._exact_cache.get("norm")
        if val is None:
            val = math.sqrt(max(float(np.linalg.eigvalsh(self._gram_blocks()).max()), 0.0))
            self._exact_cache["norm"] = val
        return val


def apply_forward(A: ForwardModel, x) -> np.ndarray:
    return A.forward(x)


def apply_adjoint(A: ForwardModel, y) -> np.ndarray:
    return A.adjoint(y)


def data_fidelity(A: ForwardModel, x, y, sigma2: Optional[float] = None) -> float:
    """``||y - A x||^2 / (2 sigma2)``."""
    s2 = A.sigma2 if sigma2 is None else sigma2
    r = np.asarray(y) - A.forward(x)
    return float(np.vdot(r, r).real) / (2.0 * s2)


def grad_data(A: ForwardModel, x, y, sigma2: Optional[float] = None) -> np.ndarray:
    """Gradient ``A^H (A x - y) / sigma2`` of :func:`data_fidelity`."""
    s2 = A.sigma2 if sigma2 is None else sigma2
    return A.adjoint(A.forward(x) - np.asarray(y)) / s2


@dataclass(frozen=True)
class InnerSolver:
    """How the data proximal map is evaluated.

    ``exact`` solves the normal equations blockwise; ``cg`` and ``gd`` run
    exactly ``iters`` iterations warm-started from the prox argument.
    """

    kind: str = "cg"
    iters: int = 4
    step: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("exact", "cg", "gd"):
            raise ValueError(f"unknown inner solver {self.kind!r}")
        if self.kind != "exact" and self.iters < 1:
            raise ValueError("inner solver needs at least one iteration")

    def __str__(self):
        if self.kind == "exact":
            return "exact"
        if self.kind == "gd" and self.step is not None:
            return f"gd({self.iters},{self.step!r})"
        return f"{self.kind}({self.iters})"


_INNER_RE = re.compile(r"^\s*(cg|gd)\s*\(\s*(\d+)\s*(?:,\s*([0-9.eE+-]+)\s*)?\)\s*$")


def parse_inner(spec) -> InnerSolver:
    """Accept ``"exact"``, ``"cg(4)"``, ``"gd(4, 0.5)"`` or an :class:`InnerSolver`."""
    if isinstance(spec, InnerSolver):
        return spec
    if isinstance(spec, dict):
        return InnerSolver(spec.get("kind", "cg"), int(spec.get("iters", 4)), spec.get("step"))
    s = str(spec).strip()
    if s == "exact":
        return InnerSolver("exact", 0)
    m = _INNER_RE.match(s)
    if not m:
        raise ValueError(f"cannot parse inner solver {spec!r}")
    kind, iters, step = m.group(1), int(m.group(2)), m.group(3)
    return InnerSolver(kind, iters, None if step is None else float(step))


def prox_data(A: ForwardModel, z, y, eta: float, sigma2: Optional[float] = None, inner="exact") -> np.ndarray:
    """Proximal map of the data term,

    ``argmin_x ||y - A x||^2 / (2 sigma2) + ||x - z||^2 / (2 eta)``
    ``= (A^H A + (sigma2/eta) I)^{-1} (A^H y + (sigma2/eta) z)``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    s2 = A.sigma2 if sigma2 is None else sigma2
    inner = parse_inner(inner)
    z = np.asarray(z, dtype=np.complex128)
    rho = s2 / eta
    b = A.adjoint(y) + rho * z

    if inner.kind == "exact":
        inv = A._exact_inverse(rho)
        # blocks act along ny for each (frame, row)
        bt = np.transpose(b, (2, 0, 1))  # (nt, nx, ny)
        xt = np.einsum("txab,txb->txa", inv, bt)
        return np.ascontiguousarray(np.transpose(xt, (1, 2, 0)))

    def op(v):
        return A.normal(v) + rho * v

    x = z.copy()
    if inner.kind == "cg":
        r = b - op(x)
        p = r.copy()
        rr = np.vdot(r, r).real
        for _ in range(inner.iters):
            if rr == 0.0:
                break
            Ap = op(p)
            alpha = rr / np.vdot(p, Ap).real
            x += alpha * p
            r -= alpha * Ap
            rr_new = np.vdot(r, r).real
            p = r + (rr_new / rr) * p
            rr = rr_new
        return x

    # ||A^H A|| <= 1 for SOS-normalized models
    step = inner.step if inner.step is not None else 1.0 / (1.0 + rho)
    for _ in range(inner.iters):
        x -= step * (op(x) - b)
    return x


def operator_norm(A: ForwardModel, iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of ``||A||_2`` (nondecreasing in ``iters``)."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    v = Rng(seed).complex_normal(A.image_shape)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = A.normal(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return math.sqrt(float(np.vdot(v, A.normal(v)).real))


def save_model(A: ForwardModel, path, coils_name: str = "coils.ct") -> None:
    """Write ``model.json`` with the coil maps next to it in ``.ct`` format."""
    folder = os.path.dirname(os.path.abspath(path))
    write_tensor(A.coils.maps, os.path.join(folder, coils_name))
    doc = {
        "sigma2": A.sigma2,
        "coils": coils_name,
        "sampling": A.pattern.to_json(),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def load_model(path) -> ForwardModel:
    with open(path) as f:
        doc = json.load(f)
    folder = os.path.dirname(os.path.abspath(path))
    maps = read_tensor(os.path.join(folder, doc["coils"]))
    pattern = SamplingPattern.from_json(doc["sampling"])
    return ForwardModel(pattern, CoilMaps(maps), float(doc.get("sigma2", 1.0)))
