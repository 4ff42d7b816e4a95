"""Regularization by denoising: accelerated proximal-gradient, gradient and fixed-point solvers.

All variants seek ``x`` with

    0 = (1/sigma2) A^H (A x - y) + (1/eta) (x - f(x)).

``apg`` takes an exact or inexact data prox with parameter ``eta / L``,
``gd`` replaces that prox by a single gradient step on the full RED
objective, and ``fp`` is ``apg`` with ``L = 1`` and no momentum.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import core
from .denoisers import Identity
from .equilibrium import ce_residual_red
from .linops import ForwardModel, data_fidelity, parse_inner, prox_data
from .pnp import NonexpansiveWarning, SolverResult, initial_image
from .trace import RED_COLUMNS, SolverTrace

__all__ = ["RedConfig", "ConvergenceWarning", "red_residual", "red_apg", "red_gd", "red_solve"]


class ConvergenceWarning(UserWarning):
    """Parameters are outside the range with a convergence guarantee."""


@dataclass
class RedConfig:
    variant: str = "apg"
    eta: float = 1.0
    sigma2: float = 1.0
    L: float = 1.0
    max_iters: int = 100
    inner: Any = "cg(4)"
    denoiser: Any = None
    init: Any = "adjoint"
    trace_ce: bool = True
    timing: bool = True

    def __post_init__(self):
        if self.variant not in ("apg", "gd", "fp"):
            raise ValueError(f"variant must be apg, gd or fp, got {self.variant!r}")
        if not self.eta > 0 or not self.sigma2 > 0:
            raise ValueError("eta and sigma2 must be positive")
        if self.L < 1.0:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.variant == "fp":
            self.L = 1.0
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be positive")
        self.max_iters = int(self.max_iters)
        parse_inner(self.inner)


def red_residual(x, y, A: ForwardModel, f, eta, sigma2=None):
    """``(r, ||r||)`` with ``r = (1/sigma2) A^H (A x - y) + (1/eta)(x - f(x))``."""
    s2 = A.sigma2 if sigma2 is None else float(sigma2)
    x = np.asarray(x)
    if x.shape != A.image_shape:
        raise ValueError(f"x shape {x.shape} does not match model {A.image_shape}")
    r = A.adjoint(A.forward(x) - np.asarray(y)) / s2 + (x - f(x)) / eta
    return r, float(np.linalg.norm(r))


def _setup(cfg, A):
    f = Identity() if cfg.denoiser is None else cfg.denoiser
    if not getattr(f, "claims_nonexpansive", False):
        warnings.warn("denoiser does not claim to be nonexpansive", NonexpansiveWarning, stacklevel=3)
    if cfg.variant != "fp" and cfg.L <= 1.0:
        warnings.warn("convergence is only guaranteed for L > 1", ConvergenceWarning, stacklevel=3)
    return f


def _record(trace, cfg, A, y, f, x, x_ref, t0):
    r_h = r_f = rn = None
    if cfg.trace_ce:
        # u chosen so the data agent balances; r_h is then zero by construction
        u = (cfg.eta / cfg.sigma2) * A.adjoint(np.asarray(y) - A.forward(x))
        r_h = float(np.linalg.norm(x - prox_data(A, x - u, y, cfg.eta, cfg.sigma2, "exact")))
        r_f = ce_residual_red(x, y, A, f, cfg.eta, cfg.sigma2, L=1.0)
        rn = red_residual(x, y, A, f, cfg.eta, cfg.sigma2)[1]
    trace.append(
        iter=len(trace) + 1,
        nmse_db=None if x_ref is None else core.rsnr(x_ref, x).nmse_db,
        data_fidelity=data_fidelity(A, x, y, cfg.sigma2),
        ce_res_h=r_h,
        ce_res_f=r_f,
        seconds=(time.perf_counter() - t0) if cfg.timing else None,
        red_residual_norm=rn,
    )


def _run(y, A: ForwardModel, cfg: RedConfig, x_ref, x0, gd: bool) -> SolverResult:
    f = _setup(cfg, A)
    y = core.as_tensor(y, "y")
    L = cfg.L
    x = initial_image(A, y, cfg.init) if x0 is None else np.array(x0, dtype=np.complex128)
    x_prev, z, v = x, x, x
    aty = A.adjoint(y)
    step = cfg.eta / (L * cfg.sigma2)
    q = 1.0
    trace = SolverTrace(RED_COLUMNS)
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        if gd:
            x = v - step * (A.normal(z) - aty)
        else:
            x = prox_data(A, v, y, cfg.eta / L, cfg.sigma2, cfg.inner)
        if not np.all(np.isfinite(x)):
            raise core.NumericalError(f"red_{cfg.variant}: non-finite iterate at iteration {k}")
        if cfg.variant == "fp":
            z = x
        else:
            q_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * q * q))
            z = x + ((q - 1.0) / q_next) * (x - x_prev)
            q = q_next
        fz = np.asarray(f(z), dtype=np.complex128)
        v = fz / L + (1.0 - 1.0 / L) * z
        x_prev = x
        _record(trace, cfg, A, y, f, x, x_ref, t0)
    return SolverResult(x, None, trace, "ok")


def red_apg(y, A: ForwardModel, cfg: RedConfig, x_ref=None, x0=None) -> SolverResult:
    """``x = h(v; eta/L); z = x + ((q_prev - 1)/q)(x - x_prev); v = f(z)/L + (1 - 1/L) z``."""
    if cfg.variant == "gd":
        cfg = dataclasses.replace(cfg, variant="apg")
    return _run(y, A, cfg, x_ref, x0, gd=False)


def red_gd(y, A: ForwardModel, cfg: RedConfig, x_ref=None, x0=None) -> SolverResult:
    """Accelerated gradient descent on the RED objective with step ``eta / L``.

    The data step is ``x = v - (eta / (L sigma2)) A^H (A z - y)``; its fixed
    points are exactly those of :func:`red_apg`.  Convergence requires
    ``L >= 1 + eta ||A||^2 / sigma2`` for a nonexpansive ``f``.
    """
    cfg = dataclasses.replace(cfg, variant="gd")
    return _run(y, A, cfg, x_ref, x0, gd=True)


def red_solve(y, A: ForwardModel, cfg: RedConfig, x_ref=None, x0=None) -> SolverResult:
    if cfg.variant == "gd":
        return red_gd(y, A, cfg, x_ref, x0)
    return _run(y, A, cfg, x_ref, x0, gd=False)
