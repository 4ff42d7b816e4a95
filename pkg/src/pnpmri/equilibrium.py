"""Consensus-equilibrium residuals, the Mann CE solver and score identities.

The prox-based PnP solvers all seek a pair ``(x, u)`` with

    x = h(x - u; eta)      (data agent)
    x = f(x + u)           (denoiser agent)

where ``h`` is the data proximal map.  RED's pair replaces the second line
by ``x = f(x) + L u``.  Stacking ``z1 = x - u``, ``z2 = x + u`` turns the
pair into a fixed point of ``(2G - I)(2F - I)``, solved here by Mann
averaging.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import core
from .denoisers import TrainingSet, kde_log_density, kde_score
from .linops import ForwardModel, prox_data
from .trace import MANN_COLUMNS, SolverTrace

__all__ = [
    "CEState",
    "ce_residual_pnp",
    "ce_u_formula",
    "pnp_fp1_residual",
    "ce_residual_red",
    "mann_solve",
    "tweedie_check",
    "GapEstimate",
    "score_match_gap",
]


@dataclass
class CEState:
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.u):
            raise ValueError(f"x {np.shape(self.x)} and u {np.shape(self.u)} differ in shape")

    @property
    def z1(self):
        return self.x - self.u

    @property
    def z2(self):
        return self.x + self.u

    @classmethod
    def from_stacked(cls, z1, z2) -> "CEState":
        return cls((z1 + z2) / 2.0, (z2 - z1) / 2.0)


def _sigma2(A, sigma2):
    return A.sigma2 if sigma2 is None else float(sigma2)


def ce_residual_pnp(state: CEState, y, A: ForwardModel, f, eta, sigma2=None, inner="exact"):
    """``(||x - h(x - u)||, ||x - f(x + u)||)``."""
    s2 = _sigma2(A, sigma2)
    x, u = np.asarray(state.x), np.asarray(state.u)
    if x.shape != A.image_shape:
        raise ValueError(f"state shape {x.shape} does not match model {A.image_shape}")
    r_h = np.linalg.norm(x - prox_data(A, x - u, y, eta, s2, inner))
    r_f = np.linalg.norm(x - f(x + u))
    return float(r_h), float(r_f)


def ce_u_formula(xhat, y, A: ForwardModel, eta, sigma2=None):
    """Correction ``u = (eta / sigma2) A^H (y - A x)`` that zeroes the data residual."""
    s2 = _sigma2(A, sigma2)
    return (eta / s2) * A.adjoint(np.asarray(y) - A.forward(xhat))


def pnp_fp1_residual(xhat, y, A: ForwardModel, f, eta, sigma2=None) -> float:
    """Single-equation residual ``||x - f(x - (eta/sigma2) A^H (A x - y))||``."""
    s2 = _sigma2(A, sigma2)
    xhat = np.asarray(xhat)
    arg = xhat - (eta / s2) * A.normal(xhat) + (eta / s2) * A.adjoint(y)
    return float(np.linalg.norm(xhat - f(arg)))


def ce_residual_red(xhat, y, A: ForwardModel, f, eta, sigma2=None, L=1.0) -> float:
    """Balance residual ``||(L eta / sigma2) A^H (A x - y) - (f(x) - x)||``."""
    s2 = _sigma2(A, sigma2)
    xhat = np.asarray(xhat)
    lhs = (L * eta / s2) * A.adjoint(A.forward(xhat) - np.asarray(y))
    return float(np.linalg.norm(lhs - (f(xhat) - xhat)))


def mann_solve(
    y,
    A: ForwardModel,
    f,
    eta: float,
    sigma2: Optional[float] = None,
    gamma: float = 0.5,
    iters: int = 200,
    z0=None,
    inner="exact",
    x_ref=None,
):
    """Mann iteration ``z <- (1 - gamma) z + gamma (2G - I)(2F - I) z``.

    Args:
        z0: optional ``(z1, z2)`` pair; defaults to ``z1 = z2 = A^H y``.

    Returns:
        ``(CEState, SolverTrace)``.  The state is read off the last iterate
        via ``x = (z1 + z2) / 2``, ``u = (z2 - z1) / 2``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    s2 = _sigma2(A, sigma2)
    if z0 is None:
        z1 = A.adjoint(y)
        z2 = z1.copy()
    else:
        z1, z2 = (np.array(z, dtype=np.complex128) for z in z0)

    trace = SolverTrace(MANN_COLUMNS)
    t0 = time.perf_counter()
    for k in range(1, iters + 1):
        h1 = prox_data(A, z1, y, eta, s2, inner)
        f2 = f(z2)
        # CE residuals of the current state come for free from F(z)
        x = (z1 + z2) / 2.0
        r_h = np.linalg.norm(x - h1)
        r_f = np.linalg.norm(x - f2)
        w1 = 2.0 * h1 - z1
        w2 = 2.0 * f2 - z2
        avg = w1 + w2  # = 2 * mean(w1, w2)
        t1, t2 = avg - w1, avg - w2
        n1 = (1.0 - gamma) * z1 + gamma * t1
        n2 = (1.0 - gamma) * z2 + gamma * t2
        step = math.sqrt(np.linalg.norm(n1 - z1) ** 2 + np.linalg.norm(n2 - z2) ** 2)
        z1, z2 = n1, n2
        if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
            raise core.NumericalError(f"Mann iteration produced non-finite values at iteration {k}")
        nmse = None if x_ref is None else core.rsnr(x_ref, (z1 + z2) / 2.0).nmse_db
        trace.append(
            iter=k,
            nmse_db=nmse,
            stacked_residual=step,
            ce_res_h=r_h,
            ce_res_f=r_f,
            seconds=time.perf_counter() - t0,
        )
    return CEState.from_stacked(z1, z2), trace


# --------------------------------------------------------------------------
# Tweedie and score matching (real-isomorphic space)
# --------------------------------------------------------------------------


def tweedie_check(ts: TrainingSet, z, delta: float = 1e-5) -> float:
    """Relative gap between a central-difference ``grad ln p~`` and ``(f_mmse(z) - z) / eta``."""
    v = np.asarray(z, dtype=np.float64).ravel()
    if v.size != ts.dim:
        raise ValueError(f"z has {v.size} entries, training set has dimension {ts.dim}")
    g = np.empty_like(v)
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = delta
        g[j] = (kde_log_density(ts, v + e) - kde_log_density(ts, v - e)) / (2.0 * delta)
    tw = kde_score(ts, v)
    return float(np.linalg.norm(g - tw) / np.linalg.norm(tw))


@dataclass(frozen=True)
class GapEstimate:
    mean: float
    stderr: float
    samples: int

    def ci(self, z: float = 1.96):
        return self.mean - z * self.stderr, self.mean + z * self.stderr


def score_match_gap(ts: TrainingSet, f_candidate, samples: int = 1000, seed: int = 0) -> GapEstimate:
    """Monte-Carlo ``E || grad ln p~(z) - (f(z) - z) / eta ||^2`` over ``z = x_t + N(0, eta I)``.

    ``f_candidate`` maps a real vector of length ``ts.dim`` to another.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = core.Rng(seed)
    idx = np.minimum((rng.random(samples) * ts.T).astype(int), ts.T - 1)
    noise = rng.standard_normal((samples, ts.dim)) * math.sqrt(ts.eta)
    vals = np.empty(samples)
    for s in range(samples):
        z = ts.points[idx[s]] + noise[s]
        d = kde_score(ts, z) - (np.asarray(f_candidate(z), dtype=np.float64).ravel() - z) / ts.eta
        vals[s] = d @ d
    se = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return GapEstimate(float(vals.mean()), se, samples)
