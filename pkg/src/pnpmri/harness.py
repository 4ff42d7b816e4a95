"""Synthetic cine-MRI experiments: phantom, coils, sampling, noise and orchestration.

Every random choice is drawn from :class:`core.Rng` sub-streams, so an
experiment is a pure function of its :class:`ExperimentSpec` and reruns
produce byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import core
from .denoisers import denoiser_from_spec
from .linops import CoilMaps, ForwardModel, SamplingPattern, save_model, signed_frequency
from .pnp import PnPConfig, solve
from .red import RedConfig, red_solve

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "default_phantom",
    "make_phantom",
    "make_coilmaps",
    "make_sampling",
    "add_noise",
    "ExperimentSpec",
    "ExperimentData",
    "simulate",
    "run_experiment",
    "write_pgm",
    "magnitude_image",
]


# --------------------------------------------------------------------------
# phantom
# --------------------------------------------------------------------------


@dataclass
class Ellipse:
    """Smooth ellipse on the ``[-1, 1]^2`` grid.

    Radii at frame ``t`` are scaled by ``1 + mod_amp * sin(2 pi t / nt + mod_phase)``.
    """

    center: tuple = (0.0, 0.0)
    axes: tuple = (0.5, 0.5)
    intensity: float = 1.0
    angle: float = 0.0
    mod_amp: float = 0.0
    mod_phase: float = 0.0

    def __post_init__(self):
        if len(self.axes) != 2 or min(self.axes) <= 0:
            raise ValueError(f"ellipse axes must be positive, got {self.axes}")
        if abs(self.mod_amp) >= 1.0:
            raise ValueError("radius modulation must stay below 1 in magnitude")


@dataclass
class PhantomSpec:
    nx: int = 64
    ny: int = 64
    nt: int = 8
    ellipses: list = field(default_factory=list)
    edge: float = 0.03
    phase_slope: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.ellipses = [e if isinstance(e, Ellipse) else Ellipse(**e) for e in self.ellipses]
        if min(self.nx, self.ny, self.nt) < 1:
            raise ValueError("phantom dimensions must be positive")
        if not self.edge > 0:
            raise ValueError("edge width must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        """A missing ``ellipses`` key selects the default torso; ``[]`` gives an empty phantom."""
        d = dict(d)
        if "ellipses" not in d:
            d["ellipses"] = default_phantom().ellipses
        d["ellipses"] = [e if isinstance(e, Ellipse) else
                         Ellipse(**{k: tuple(v) if isinstance(v, list) else v for k, v in e.items()})
                         for e in d["ellipses"]]
        return cls(**d)


def default_phantom(nx=64, ny=64, nt=8, seed=0) -> PhantomSpec:
    """Torso with a beating ventricle and a few static structures."""
    return PhantomSpec(
        nx,
        ny,
        nt,
        [
            Ellipse((0.0, 0.0), (0.85, 0.68), 0.35),
            Ellipse((0.12, -0.08), (0.34, 0.30), 0.25, 0.3, 0.08, 0.0),
            Ellipse((0.12, -0.08), (0.20, 0.17), 0.35, 0.3, 0.18, 0.0),
            Ellipse((-0.38, 0.22), (0.14, 0.22), 0.3, -0.4),
            Ellipse((-0.30, -0.40), (0.10, 0.08), 0.45),
            Ellipse((0.50, 0.35), (0.07, 0.12), 0.25, 0.0, 0.1, math.pi / 2),
        ],
        seed=seed,
    )


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Complex ``(nx, ny, nt)`` cine with magnitudes in ``[0, 1]``."""
    gx = -1.0 + (2.0 * np.arange(spec.nx) + 1.0) / spec.nx
    gy = -1.0 + (2.0 * np.arange(spec.ny) + 1.0) / spec.ny
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    mag = np.zeros((spec.nx, spec.ny, spec.nt))
    for t in range(spec.nt):
        for e in spec.ellipses:
            s = 1.0 + e.mod_amp * math.sin(2.0 * math.pi * t / spec.nt + e.mod_phase)
            c, sn = math.cos(e.angle), math.sin(e.angle)
            dx, dy = X - e.center[0], Y - e.center[1]
            u = (c * dx + sn * dy) / (e.axes[0] * s)
            v = (-sn * dx + c * dy) / (e.axes[1] * s)
            r = np.sqrt(u * u + v * v)
            mag[:, :, t] += e.intensity * 0.5 * (1.0 - np.tanh((r - 1.0) / spec.edge))
    np.clip(mag, 0.0, 1.0, out=mag)
    rng = core.Rng(spec.seed)
    p0, px, py = (rng.random(3) * 2.0 - 1.0) * np.array([math.pi, spec.phase_slope, spec.phase_slope])
    phase = p0 + px * X + py * Y
    return mag * np.exp(1j * phase)[:, :, None]


# --------------------------------------------------------------------------
# coils, sampling and noise
# --------------------------------------------------------------------------


def make_coilmaps(nx: int, ny: int, C: int, seed: int = 0, width: float = 0.9) -> CoilMaps:
    """Gaussian-bump coil profiles around the field of view, SOS-normalized."""
    if C < 1:
        raise ValueError("need at least one coil")
    rng = core.Rng(seed)
    gx = -1.0 + (2.0 * np.arange(nx) + 1.0) / nx
    gy = -1.0 + (2.0 * np.arange(ny) + 1.0) / ny
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    jitter = rng.random((C, 3))
    raw = np.empty((C, nx, ny), dtype=np.complex128)
    for i in range(C):
        ang = 2.0 * math.pi * (i + 0.5 * jitter[i, 0]) / C
        rad = 1.1 + 0.3 * jitter[i, 1]
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        d2 = (X - cx) ** 2 + (Y - cy) ** 2
        ph = 2.0 * math.pi * jitter[i, 2] + 0.5 * (X * math.cos(ang) + Y * math.sin(ang))
        raw[i] = np.exp(-d2 / (2.0 * width**2)) * np.exp(1j * ph)
    return CoilMaps.normalize(raw)


def _acs_order(ny):
    k = np.arange(ny)
    f = signed_frequency(k, ny)
    # 0, 1, -1, 2, -2, ...
    return k[np.lexsort((-f, np.abs(f)))]


def make_sampling(
    nx: int,
    ny: int,
    nt: int,
    R: float,
    scheme: str = "variable_density",
    acs_lines: int = 4,
    seed: int = 0,
    d: float = 2.0,
) -> SamplingPattern:
    """Per-frame pseudo-random phase-encode lines.

    Each frame keeps ``floor(ny / R + 0.5)`` lines: the ``acs_lines``
    lowest-frequency lines plus lines drawn without replacement, uniformly
    or with weight ``(1 - |k| / k_max)^d``.
    """
    if R < 1:
        raise ValueError("acceleration rate must be >= 1")
    if scheme not in ("uniform_random", "variable_density"):
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    L = int(math.floor(ny / R + 0.5))
    if L < max(acs_lines, 1):
        raise ValueError(f"R = {R} keeps {L} lines, fewer than the {acs_lines} ACS lines")
    acs = _acs_order(ny)[:acs_lines]
    freq = np.abs(signed_frequency(np.arange(ny), ny)).astype(float)
    if scheme == "uniform_random":
        weight = np.ones(ny)
    else:
        weight = (1.0 - freq / (ny / 2.0 + 1.0)) ** d
    master = core.Rng(seed)
    frames = []
    for _ in range(nt):
        rng = master.spawn()
        chosen = set(int(i) for i in acs)
        w = weight.copy()
        w[list(chosen)] = 0.0
        for u in rng.random(L - len(chosen)):
            c = np.cumsum(w)
            j = int(np.searchsorted(c, u * c[-1], side="right"))
            j = min(j, ny - 1)
            while w[j] == 0.0:  # guards the u * c[-1] == c[-1] edge
                j -= 1
            chosen.add(j)
            w[j] = 0.0
        frames.append(sorted(chosen))
    return SamplingPattern(nx, ny, frames)


def add_noise(y, snr_db: float, seed: int = 0):
    """Complex AWGN at ``snr_db`` relative to the mean power of ``y``.

    Returns ``(y_noisy, sigma2)``; ``snr_db = inf`` returns ``y`` and ``0``.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.size == 0:
        raise ValueError("cannot add noise to an empty array")
    if math.isinf(snr_db) and snr_db > 0:
        return y.copy(), 0.0
    power = float(np.vdot(y, y).real) / y.size
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    w = core.Rng(seed).complex_normal(y.shape) * math.sqrt(sigma2)
    return y + w, sigma2


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    """Problem description plus the solver configurations to compare.

    Each solver entry is a dict with a unique ``name`` and a ``kind`` of
    ``pnp`` (fields of :class:`PnPConfig`), ``red`` (fields of
    :class:`RedConfig`) or ``adjoint``.  ``sigma2: "noise"`` in an entry
    substitutes the realized noise variance.
    """

    phantom: PhantomSpec = field(default_factory=default_phantom)
    C: int = 4
    R: float = 4.0
    scheme: str = "variable_density"
    density: float = 2.0
    acs_lines: int = 4
    snr_db: float = 30.0
    coil_seed: int = 1
    sampling_seed: int = 2
    noise_seed: int = 3
    solvers: list = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.phantom, dict):
            self.phantom = PhantomSpec.from_dict(self.phantom)
        if self.R < 1:
            raise ValueError("R must be >= 1")
        names = [s.get("name") for s in self.solvers]
        if any(n is None for n in names) or len(set(names)) != len(names):
            raise ValueError("every solver entry needs a unique name")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if d.get("snr_db") in ("inf", "Infinity"):
            d["snr_db"] = math.inf
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class ExperimentData:
    x: np.ndarray
    y: np.ndarray
    A: ForwardModel
    sigma2: float


def simulate(spec: ExperimentSpec, out_dir: Optional[str] = None) -> ExperimentData:
    """Phantom, coils, sampling and noisy k-space; optionally written to ``out_dir``."""
    ph = spec.phantom
    x = make_phantom(ph)
    coils = make_coilmaps(ph.nx, ph.ny, spec.C, spec.coil_seed)
    pattern = make_sampling(ph.nx, ph.ny, ph.nt, spec.R, spec.scheme, spec.acs_lines, spec.sampling_seed, spec.density)
    A0 = ForwardModel(pattern, coils)
    y, sigma2 = add_noise(A0.forward(x), spec.snr_db, spec.noise_seed)
    A = ForwardModel(pattern, coils, sigma2 if sigma2 > 0 else 1.0)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        core.write_tensor(x, os.path.join(out_dir, "x.ct"))
        core.write_tensor(y, os.path.join(out_dir, "y.ct"))
        save_model(A, os.path.join(out_dir, "model.json"))
    return ExperimentData(x, y, A, sigma2)


def magnitude_image(img, scale: float) -> np.ndarray:
    if not scale > 0:
        scale = 1.0
    return np.round(np.clip(np.abs(img) / scale, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary 8-bit PGM; rows of ``gray`` become image rows."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def _solver_config(entry: dict, sigma2: float, image_shape):
    d = {k: v for k, v in entry.items() if k not in ("name", "kind")}
    if d.get("sigma2") == "noise":
        d["sigma2"] = sigma2
    d.setdefault("timing", False)
    kind = entry.get("kind", "pnp")
    if kind == "pnp":
        return kind, PnPConfig.from_dict(d, image_shape)
    if kind == "red":
        if isinstance(d.get("denoiser"), dict):
            d["denoiser"] = denoiser_from_spec(d["denoiser"], image_shape)
        return kind, RedConfig(**d)
    if kind == "adjoint":
        return kind, None
    raise ValueError(f"unknown solver kind {kind!r}")


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str] = None) -> list:
    """Simulate, reconstruct with every configured solver and score against the phantom.

    Returns a list of report rows ``{"name", "rsnr_db", "nmse_db", "iters"}``;
    the zero-filled adjoint is always the first row.  With ``out_dir`` set,
    writes ``report.csv``, ``traces/<name>.csv`` and middle-frame PGMs with
    ``x6`` error maps under ``images/``.
    """
    data = simulate(spec, out_dir)
    x, y, A = data.x, data.y, data.A
    scale = float(np.percentile(np.abs(x), 99))
    mid = x.shape[2] // 2
    results = [("adjoint", A.adjoint(y), 0, None)]
    for entry in spec.solvers:
        kind, cfg = _solver_config(entry, data.sigma2, A.image_shape)
        try:
            if kind == "adjoint":
                res = None
                xh = A.adjoint(y)
            elif kind == "pnp":
                res = solve(y, A, cfg, x_ref=x)
                xh = res.x
            else:
                res = red_solve(y, A, cfg, x_ref=x)
                xh = res.x
        except (core.NumericalError, ValueError) as e:
            raise type(e)(f"solver {entry['name']!r}: {e}") from e
        results.append((entry["name"], xh, 0 if res is None else len(res.trace), res))

    rows = []
    for name, xh, iters, _ in results:
        m = core.rsnr(x, xh)
        rows.append({"name": name, "rsnr_db": m.rsnr_db, "nmse_db": m.nmse_db, "iters": iters})

    if out_dir is not None:
        tdir = os.path.join(out_dir, "traces")
        idir = os.path.join(out_dir, "images")
        os.makedirs(tdir, exist_ok=True)
        os.makedirs(idir, exist_ok=True)
        write_pgm(os.path.join(idir, "reference.pgm"), magnitude_image(x[:, :, mid], scale))
        for name, xh, _, res in results:
            write_pgm(os.path.join(idir, f"{name}.pgm"), magnitude_image(xh[:, :, mid], scale))
            write_pgm(os.path.join(idir, f"{name}_err6.pgm"), magnitude_image(6.0 * (xh - x)[:, :, mid], scale))
            if res is not None:
                res.trace.to_csv(os.path.join(tdir, f"{name}.csv"), timing=False)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["name", "rsnr_db", "nmse_db", "iters"])
            for r in rows:
                w.writerow([r["name"], repr(r["rsnr_db"]), repr(r["nmse_db"]), r["iters"]])
    return rows
