"""Monotone FISTA for ``||y - A x||^2 / (2 sigma2) + lam ||Psi x||_1`` with orthonormal Haar ``Psi``.

Used as a long-run reference optimum for the proximal-denoiser PnP runs.
"""

import math
from typing import Optional

import numpy as np

from .denoisers import TDTDenoiser
from .linops import ForwardModel


def l1_haar_norm(x, levels: int = 1) -> float:
    c = TDTDenoiser(0.0, "orth_haar", levels).analysis(x)
    return float(np.sum(np.abs(c)))


def l1_objective(A: ForwardModel, x, y, lam: float, sigma2: Optional[float] = None, levels: int = 1) -> float:
    s2 = A.sigma2 if sigma2 is None else sigma2
    r = np.asarray(y) - A.forward(x)
    return float(np.vdot(r, r).real) / (2.0 * s2) + lam * l1_haar_norm(x, levels)


def mfista(
    y,
    A: ForwardModel,
    lam: float,
    sigma2: Optional[float] = None,
    iters: int = 5000,
    step: Optional[float] = None,
    levels: int = 1,
    x0=None,
):
    """Beck-Teboulle monotone FISTA.

    Returns:
        ``(x, objective_history)``; the history is nonincreasing.
    """
    s2 = A.sigma2 if sigma2 is None else sigma2
    t_step = step if step is not None else s2 / A.norm() ** 2
    prox = TDTDenoiser(lam * t_step, "orth_haar", levels)
    aty = A.adjoint(y)

    def F(v):
        return l1_objective(A, v, y, lam, s2, levels)

    x = A.adjoint(y) if x0 is None else np.array(x0, dtype=np.complex128)
    w = x.copy()
    t = 1.0
    fx = F(x)
    hist = [fx]
    for _ in range(iters):
        z = prox(w - (t_step / s2) * (A.normal(w) - aty))
        fz = F(z)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        x_prev = x
        if fz <= fx:
            x, fx = z, fz
        w = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
        hist.append(fx)
    return x, np.array(hist)
