"""Denoising AMP on i.i.d. Gaussian ensembles, Monte-Carlo divergence and state evolution.

Real-valued only.  A denoiser family maps the current effective noise
variance ``eta`` to a separable scalar denoiser; the denoiser may expose an
analytic ``divergence(z)``, otherwise the divergence is estimated by a
random probe.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import core
from .trace import AMP_COLUMNS, SolverTrace

__all__ = [
    "GaussianEnsemble",
    "BernoulliGaussian",
    "AmpState",
    "AmpResult",
    "SoftThresholdFamily",
    "BGMMSEFamily",
    "IdentityFamily",
    "ZeroFamily",
    "mc_divergence",
    "damp_step",
    "damp_run",
    "state_evolution",
    "make_instance",
    "DivergenceWarning",
]


class DivergenceWarning(UserWarning):
    pass


@dataclass
class GaussianEnsemble:
    """``M x N`` matrix with i.i.d. ``N(0, 1/M)`` entries drawn from :class:`core.Rng`."""

    M: int
    N: int
    seed: int = 0
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        self.A = core.Rng(self.seed).standard_normal((self.M, self.N)) / math.sqrt(self.M)


@dataclass(frozen=True)
class BernoulliGaussian:
    rho: float
    var: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.var > 0:
            raise ValueError("var must be positive")

    @property
    def second_moment(self) -> float:
        return self.rho * self.var

    def sample(self, n: int, rng: core.Rng) -> np.ndarray:
        on = rng.random(n) < self.rho
        return np.where(on, rng.standard_normal(n) * math.sqrt(self.var), 0.0)


# --------------------------------------------------------------------------
# scalar denoiser families
# --------------------------------------------------------------------------


class _Scalar:
    def __init__(self, fn, div=None):
        self._fn, self._div = fn, div

    def __call__(self, z):
        return self._fn(np.asarray(z, dtype=np.float64))

    @property
    def has_divergence(self):
        return self._div is not None

    def divergence(self, z):
        return float(self._div(np.asarray(z, dtype=np.float64)))


class SoftThresholdFamily:
    """Soft thresholding at ``tau = c sqrt(eta)``."""

    def __init__(self, c: float = 1.14):
        if c < 0:
            raise ValueError("c must be nonnegative")
        self.c = float(c)

    def __call__(self, eta: float) -> _Scalar:
        tau = self.c * math.sqrt(eta)
        return _Scalar(
            lambda z: np.sign(z) * np.maximum(np.abs(z) - tau, 0.0),
            lambda z: np.count_nonzero(np.abs(z) > tau),
        )


class BGMMSEFamily:
    """Posterior mean of a Bernoulli-Gaussian signal observed in ``N(0, eta)`` noise."""

    def __init__(self, prior: BernoulliGaussian):
        if not 0.0 < prior.rho < 1.0:
            raise ValueError("MMSE family needs 0 < rho < 1")
        self.prior = prior

    def __call__(self, eta: float) -> _Scalar:
        rho, var = self.prior.rho, self.prior.var
        g = var / (var + eta)
        a = 1.0 / eta - 1.0 / (var + eta)
        base = math.log(rho) - math.log1p(-rho) + 0.5 * math.log(eta / (var + eta))

        def pi(z):
            return expit(base + 0.5 * a * z * z)

        def fn(z):
            return g * pi(z) * z

        def div(z):
            p = pi(z)
            return np.sum(g * (p + z * z * a * p * (1.0 - p)))

        return _Scalar(fn, div)


class IdentityFamily:
    def __call__(self, eta: float) -> _Scalar:
        return _Scalar(lambda z: z.copy(), lambda z: z.size)


class ZeroFamily:
    def __call__(self, eta: float) -> _Scalar:
        return _Scalar(np.zeros_like, lambda z: 0.0)


# --------------------------------------------------------------------------
# divergence and AMP recursion
# --------------------------------------------------------------------------


def mc_divergence(f, z, eps: Optional[float] = None, seed: int = 0, probes: int = 1, return_stderr: bool = False):
    """Probe estimate ``mean_p p^T (f(z + eps p) - f(z)) / eps`` with ``p ~ N(0, I)``.

    ``eps`` defaults to ``1e-5 ||z|| / sqrt(N)`` (``1e-5`` when ``z = 0``).
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.size
    if eps is None:
        nz = float(np.linalg.norm(z))
        eps = 1e-5 * nz / math.sqrt(n) if nz > 0 else 1e-5
    if not eps > 0:
        raise ValueError("eps must be positive")
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = core.Rng(seed)
    f0 = np.asarray(f(z), dtype=np.float64)
    vals = np.empty(probes)
    for i in range(probes):
        p = rng.standard_normal(z.shape)
        vals[i] = float(np.sum(p * (np.asarray(f(z + eps * p), dtype=np.float64) - f0))) / eps
    est = float(vals.mean())
    if return_stderr:
        se = float(vals.std(ddof=1) / math.sqrt(probes)) if probes > 1 else math.inf
        return est, se
    return est


@dataclass
class AmpState:
    x: np.ndarray
    v: np.ndarray
    k: int = 0
    eta: float = math.nan
    z: Optional[np.ndarray] = None
    div: float = 0.0  # trace of the Jacobian of the last denoiser at its input

    @classmethod
    def initial(cls, M: int, N: int) -> "AmpState":
        return cls(np.zeros(N), np.zeros(M))


def damp_step(
    state: AmpState,
    y,
    A,
    family,
    eps: Optional[float] = None,
    seed: int = 0,
    onsager: bool = True,
    probes: int = 1,
    force_mc: bool = False,
) -> AmpState:
    """One D-AMP iteration.

    ``v = (sqrt(N)/||A||_F)(y - A x) + (1/M) div * v_prev``, ``z = x + A^T v``,
    ``x = f_k(z)`` with ``f_k = family(||v||^2 / M)``.
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    M, N = A.shape
    if y.shape != (M,) or state.x.shape != (N,) or state.v.shape != (M,):
        raise ValueError(f"dimension mismatch: A {A.shape}, y {y.shape}, x {state.x.shape}, v {state.v.shape}")
    scale = math.sqrt(N) / np.linalg.norm(A)
    v = scale * (y - A @ state.x)
    if onsager:
        v = v + (state.div / M) * state.v
    z = state.x + A.T @ v
    eta = float(v @ v) / M
    f = family(eta)
    x = np.asarray(f(z), dtype=np.float64)
    if getattr(f, "has_divergence", False) and not force_mc:
        div = f.divergence(z)
    else:
        div = mc_divergence(f, z, eps, seed, probes)
    return AmpState(x, v, state.k + 1, eta, z, div)


@dataclass
class AmpResult:
    x: np.ndarray
    etas: np.ndarray
    trace: SolverTrace
    status: str = "ok"
    states: list = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.x, self.etas, self.trace))


def _nmse_db(x, x0):
    n0 = float(x0 @ x0)
    if n0 == 0.0:
        return -math.inf if not np.any(x) else math.inf
    e = float((x - x0) @ (x - x0))
    return -math.inf if e == 0.0 else 10.0 * math.log10(e / n0)


def damp_run(
    y,
    A,
    family,
    iters: int,
    x_true=None,
    onsager: bool = True,
    seed: int = 0,
    probes: int = 1,
    eps: Optional[float] = None,
    force_mc: bool = False,
    se_etas=None,
    keep_states: bool = False,
    blowup: float = 1e6,
) -> AmpResult:
    """Run ``iters`` D-AMP iterations from ``x = 0``, ``v = 0``.

    The run stops with status ``"diverged"`` when ``eta_k`` becomes
    non-finite or exceeds ``blowup * eta_1``.
    """
    A = np.asarray(A, dtype=np.float64)
    M, N = A.shape
    state = AmpState.initial(M, N)
    rng = core.Rng(seed)
    trace = SolverTrace(AMP_COLUMNS)
    etas, states = [], []
    status = "ok"
    for k in range(1, iters + 1):
        state = damp_step(state, y, A, family, eps, rng.next_u64() >> 1, onsager, probes, force_mc)
        etas.append(state.eta)
        if keep_states:
            states.append(state)
        trace.append(
            iter=k,
            empirical_eta=state.eta,
            se_eta=None if se_etas is None or k > len(se_etas) else float(se_etas[k - 1]),
            nmse_db=None if x_true is None else _nmse_db(state.x, np.asarray(x_true, dtype=np.float64)),
        )
        if not math.isfinite(state.eta) or state.eta > blowup * etas[0] or not np.all(np.isfinite(state.x)):
            status = "diverged"
            warnings.warn(f"D-AMP diverged at iteration {k} (eta = {state.eta:.3g})", DivergenceWarning, stacklevel=2)
            break
    return AmpResult(state.x, np.array(etas), trace, status, states)


def state_evolution(
    prior: BernoulliGaussian,
    family,
    sigma2: float,
    M: int,
    N: int,
    iters: int,
    mc_samples: int = 200000,
    seed: int = 0,
) -> np.ndarray:
    """``eta_1 = sigma2 + (N/M) E[x^2]``, ``eta_{k+1} = sigma2 + (N/M) E(eta_k)``.

    ``E(eta)`` is the Monte-Carlo mean of ``(f_eta(x + sqrt(eta) w) - x)^2``
    over one fixed set of draws reused at every iteration.
    """
    rng = core.Rng(seed)
    x = prior.sample(mc_samples, rng)
    w = rng.standard_normal(mc_samples)
    ratio = N / M
    etas = np.empty(iters)
    eta = sigma2 + ratio * prior.second_moment
    for k in range(iters):
        etas[k] = eta
        f = family(eta)
        err = np.asarray(f(x + math.sqrt(eta) * w)) - x
        eta = sigma2 + ratio * float(np.mean(err * err))
    return etas


def make_instance(M: int, N: int, prior: BernoulliGaussian, sigma2: float, seed: int):
    """``(A, x0, y)`` with ``y = A x0 + N(0, sigma2)``; components use independent sub-streams."""
    master = core.Rng(seed)
    a_seed = master.next_u64() >> 1
    rx, rw = master.spawn(), master.spawn()
    A = GaussianEnsemble(M, N, a_seed).A
    x0 = prior.sample(N, rx)
    y = A @ x0 + math.sqrt(sigma2) * rw.standard_normal(M)
    return A, x0, y
