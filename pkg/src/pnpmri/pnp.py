"""Plug-and-play solvers: ADMM, FISTA, primal-dual splitting and balanced FISTA.

Each solver replaces the proximal map of a regularizer by an arbitrary
denoiser ``f`` and records one trace row per iteration.  CE residuals in the
trace are evaluated at the returned iterate with the exact data prox, so
they certify the consensus pair independently of the inner solver.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
import warnings
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from . import core
from .denoisers import Identity, TDTDenoiser, denoiser_from_spec
from .equilibrium import ce_u_formula
from .linops import ForwardModel, data_fidelity, parse_inner, prox_data
from .trace import PNP_COLUMNS, SolverTrace

__all__ = [
    "PnPConfig",
    "SolverResult",
    "NonexpansiveWarning",
    "pnp_admm",
    "pnp_fista",
    "pnp_pds",
    "bfista",
    "solve",
    "initial_image",
]

ALGOS = ("admm", "fista", "pds", "bfista")


class NonexpansiveWarning(UserWarning):
    """The plugged-in denoiser does not claim to be nonexpansive."""


@dataclass
class PnPConfig:
    """Solver selection and parameters.

    ``eta=None`` picks the algorithm default: 1 for ADMM and PDS,
    ``0.9 sigma2 / ||A||^2`` for FISTA.  ``gamma=None`` picks the PDS bound.
    ``init`` is ``"adjoint"``, ``"zero"`` or an image array.
    """

    algo: str = "admm"
    eta: Optional[float] = None
    sigma2: float = 1.0
    gamma: Optional[float] = None
    lam: float = 0.0
    max_iters: int = 100
    inner: Any = "cg(4)"
    denoiser: Any = None
    init: Any = "adjoint"
    tol: Optional[float] = None
    levels: int = 1
    trace_ce: bool = True
    timing: bool = True

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if isinstance(self.init, str) and self.init not in ("adjoint", "zero"):
            raise ValueError(f"init must be 'adjoint', 'zero' or an array, got {self.init!r}")
        parse_inner(self.inner)
        self.max_iters = int(self.max_iters)

    def resolved(self, A: ForwardModel) -> "PnPConfig":
        """Fill algorithm defaults and check the step-size constraints against ``||A||``."""
        nA2 = A.norm() ** 2
        eta, gamma = self.eta, self.gamma
        if self.algo in ("fista", "bfista"):
            bound = self.sigma2 / nA2
            if eta is None:
                eta = 0.9 * bound
            if not eta < bound:
                raise ValueError(f"FISTA needs eta < sigma2/||A||^2 = {bound:.6g}, got {eta:.6g}")
        elif eta is None:
            eta = 1.0
        if self.algo == "pds":
            bound = eta / (eta + self.sigma2 / nA2)
            if gamma is None:
                gamma = bound
            if gamma > bound * (1.0 + 1e-12):
                raise ValueError(f"PDS needs gamma <= {bound:.6g}, got {gamma:.6g}")
        return dataclasses.replace(self, eta=float(eta), gamma=gamma)

    @classmethod
    def from_dict(cls, doc: dict, image_shape=None) -> "PnPConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        if isinstance(doc.get("denoiser"), dict):
            doc["denoiser"] = denoiser_from_spec(doc["denoiser"], image_shape)
        return cls(**doc)

    @classmethod
    def from_json(cls, path, image_shape=None) -> "PnPConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f), image_shape)


@dataclass
class SolverResult:
    x: np.ndarray
    u: Optional[np.ndarray]
    trace: SolverTrace
    status: str = "ok"

    def __iter__(self):
        # allows ``x, u, trace = pnp_admm(...)``
        return iter((self.x, self.u, self.trace))


def initial_image(A: ForwardModel, y, init) -> np.ndarray:
    if isinstance(init, str):
        if init == "adjoint":
            return A.adjoint(y)
        if init == "zero":
            return np.zeros(A.image_shape, dtype=np.complex128)
        raise ValueError(f"unknown init {init!r}")
    x0 = np.array(init, dtype=np.complex128)
    if x0.shape != A.image_shape:
        raise ValueError(f"init shape {x0.shape} does not match model {A.image_shape}")
    return x0


def _denoiser(cfg: PnPConfig):
    f = Identity() if cfg.denoiser is None else cfg.denoiser
    if not callable(f):
        raise TypeError("denoiser must be callable")
    if not getattr(f, "claims_nonexpansive", False):
        warnings.warn(
            f"denoiser {getattr(f, 'kind', type(f).__name__)} does not claim to be nonexpansive; "
            "convergence is not guaranteed",
            NonexpansiveWarning,
            stacklevel=3,
        )
    return f


def _checked(a, algo, k, what):
    if not np.all(np.isfinite(a)):
        raise core.NumericalError(f"{algo}: non-finite {what} at iteration {k}")
    return a


class _Recorder:
    def __init__(self, cfg, A, y, f, x_ref):
        self.cfg, self.A, self.y, self.f, self.x_ref = cfg, A, y, f, x_ref
        self.trace = SolverTrace(PNP_COLUMNS)
        self.t0 = time.perf_counter()

    def __call__(self, k, x, u):
        cfg, A, y = self.cfg, self.A, self.y
        r_h = r_f = None
        if cfg.trace_ce:
            r_h = float(np.linalg.norm(x - prox_data(A, x - u, y, cfg.eta, cfg.sigma2, "exact")))
            r_f = float(np.linalg.norm(x - self.f(x + u)))
        self.trace.append(
            iter=k,
            nmse_db=None if self.x_ref is None else core.rsnr(self.x_ref, x).nmse_db,
            data_fidelity=data_fidelity(A, x, y, cfg.sigma2),
            ce_res_h=r_h,
            ce_res_f=r_f,
            seconds=(time.perf_counter() - self.t0) if cfg.timing else None,
        )


def _converged(cfg, x, x_prev):
    if cfg.tol is None:
        return False
    nx = np.linalg.norm(x)
    return nx > 0 and np.linalg.norm(x - x_prev) / nx < cfg.tol


def pnp_admm(y, A: ForwardModel, cfg: PnPConfig, x_ref=None, v0=None, u0=None) -> SolverResult:
    """``x = h(v - u); v = f(x + u); u += x - v``.  Returns ``(v, u)``."""
    cfg = cfg.resolved(A)
    f = _denoiser(cfg)
    y = core.as_tensor(y, "y")
    v = initial_image(A, y, cfg.init) if v0 is None else np.array(v0, dtype=np.complex128)
    u = np.zeros_like(v) if u0 is None else np.array(u0, dtype=np.complex128)
    rec = _Recorder(cfg, A, y, f, x_ref)
    status = "ok"
    for k in range(1, cfg.max_iters + 1):
        x = _checked(prox_data(A, v - u, y, cfg.eta, cfg.sigma2, cfg.inner), "admm", k, "x")
        v_prev = v
        v = _checked(np.asarray(f(x + u), dtype=np.complex128), "admm", k, "v")
        u = u + x - v
        rec(k, v, u)
        if _converged(cfg, v, v_prev):
            status = "converged"
            break
    return SolverResult(v, u, rec.trace, status)


def pnp_fista(y, A: ForwardModel, cfg: PnPConfig, x_ref=None, x0=None) -> SolverResult:
    """``z = s - (eta/sigma2) A^H (A s - y); x = f(z); s = x + ((q_prev - 1)/q)(x - x_prev)``."""
    cfg = cfg.resolved(A)
    f = _denoiser(cfg)
    return _fista_loop(y, A, cfg, f, x_ref, x0, "fista")


def _fista_loop(y, A, cfg, f, x_ref, x0, name):
    y = core.as_tensor(y, "y")
    x_prev = initial_image(A, y, cfg.init) if x0 is None else np.array(x0, dtype=np.complex128)
    s = x_prev.copy()
    aty = A.adjoint(y)
    c = cfg.eta / cfg.sigma2
    q = 1.0
    rec = _Recorder(cfg, A, y, f, x_ref)
    status = "ok"
    x = x_prev
    for k in range(1, cfg.max_iters + 1):
        z = s - c * (A.normal(s) - aty)
        x = _checked(np.asarray(f(z), dtype=np.complex128), name, k, "x")
        q_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * q * q))
        s = x + ((q - 1.0) / q_next) * (x - x_prev)
        q = q_next
        rec(k, x, ce_u_formula(x, y, A, cfg.eta, cfg.sigma2))
        if _converged(cfg, x, x_prev):
            status = "converged"
            x_prev = x
            break
        x_prev = x
    return SolverResult(x, ce_u_formula(x, y, A, cfg.eta, cfg.sigma2), rec.trace, status)


def pnp_pds(y, A: ForwardModel, cfg: PnPConfig, x_ref=None, x0=None, v0=None) -> SolverResult:
    """``x = f(x_prev - (eta/sigma2) A^H v); v = gamma v + (1 - gamma)(A(2x - x_prev) - y)``.

    ``v0`` defaults to ``A x0 - y``, which keeps a fixed point ``x0`` in place.
    """
    cfg = cfg.resolved(A)
    f = _denoiser(cfg)
    y = core.as_tensor(y, "y")
    x = initial_image(A, y, cfg.init) if x0 is None else np.array(x0, dtype=np.complex128)
    v = A.forward(x) - y if v0 is None else np.array(v0, dtype=np.complex128)
    c = cfg.eta / cfg.sigma2
    g = cfg.gamma
    rec = _Recorder(cfg, A, y, f, x_ref)
    status = "ok"
    for k in range(1, cfg.max_iters + 1):
        x_next = _checked(np.asarray(f(x - c * A.adjoint(v)), dtype=np.complex128), "pds", k, "x")
        v = g * v + (1.0 - g) * (A.forward(2.0 * x_next - x) - y)
        x_prev, x = x, x_next
        rec(k, x, ce_u_formula(x, y, A, cfg.eta, cfg.sigma2))
        if _converged(cfg, x, x_prev):
            status = "converged"
            break
    return SolverResult(x, ce_u_formula(x, y, A, cfg.eta, cfg.sigma2), rec.trace, status)


def bfista(y, A: ForwardModel, cfg: PnPConfig, x_ref=None, x0=None) -> SolverResult:
    """PnP-FISTA with undecimated-Haar thresholding at ``tau = lambda``."""
    if cfg.denoiser is not None and getattr(cfg.denoiser, "kind", None) != "tdt_uwt":
        raise ValueError("bfista fixes the denoiser to undecimated-Haar thresholding")
    f = TDTDenoiser(cfg.lam, "uwt_haar", cfg.levels)
    return pnp_fista(y, A, dataclasses.replace(cfg, algo="fista", denoiser=f), x_ref, x0)


_DISPATCH = {"admm": pnp_admm, "fista": pnp_fista, "pds": pnp_pds, "bfista": bfista}


def solve(y, A: ForwardModel, cfg: PnPConfig, x_ref=None) -> SolverResult:
    return _DISPATCH[cfg.algo](y, A, cfg, x_ref=x_ref)
