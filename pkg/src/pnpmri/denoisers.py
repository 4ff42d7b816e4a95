"""Plug-in denoisers and probes of their structural properties.

Every denoiser is a callable ``f(z) -> array`` of the same shape, carrying
two advisory flags: ``is_linear`` and ``claims_nonexpansive``.  Solvers only
warn when a denoiser does not claim nonexpansiveness.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import core
from .wavelets import haar_forward, haar_inverse, uwt_forward, uwt_inverse

__all__ = [
    "Denoiser",
    "FunctionDenoiser",
    "Identity",
    "TDTDenoiser",
    "LinearSymmetricDenoiser",
    "TrainingSet",
    "MMSEKDEDenoiser",
    "ExternalDenoiser",
    "ExternalDenoiserError",
    "DenoiserExitError",
    "ProtocolError",
    "ShapeMismatchError",
    "soft_thresh",
    "denoise_tdt",
    "denoise_linear",
    "denoise_mmse_kde",
    "denoise_external",
    "heat_kernel",
    "fd_jacobian",
    "probe_jacobian_symmetry",
    "probe_local_homogeneity",
    "kde_log_density",
    "kde_score",
    "denoiser_from_spec",
]


class Denoiser:
    kind = "generic"
    is_linear = False
    claims_nonexpansive = False

    def __call__(self, z):
        raise NotImplementedError


class FunctionDenoiser(Denoiser):
    """Wrap an arbitrary callable."""

    kind = "function"

    def __init__(self, fn, is_linear=False, claims_nonexpansive=False, name=None):
        self.fn = fn
        self.is_linear = is_linear
        self.claims_nonexpansive = claims_nonexpansive
        self.name = name or getattr(fn, "__name__", "function")

    def __call__(self, z):
        return self.fn(z)


class Identity(Denoiser):
    kind = "identity"
    is_linear = True
    claims_nonexpansive = True

    def __call__(self, z):
        return np.array(z, copy=True)


# --------------------------------------------------------------------------
# transform-domain thresholding
# --------------------------------------------------------------------------


def soft_thresh(u, tau):
    """Complex soft thresholding ``max(0, (|u| - tau)/|u|) * u``; ``0 -> 0``."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u)
    mag = np.abs(u)
    scale = np.zeros(mag.shape)
    nz = mag > tau
    scale[nz] = (mag[nz] - tau) / mag[nz]
    return scale * u


class TDTDenoiser(Denoiser):
    """``Psi^H soft_thresh(Psi z; tau)`` with an orthonormal or undecimated Haar ``Psi``.

    ``orth_haar`` acts on the two spatial axes of each frame, so for it the
    denoiser is the proximal map of ``lambda ||Psi x||_1`` at ``tau = lambda eta``.
    ``uwt_haar`` acts on every axis (2-D + time for a cine) and is a plug-in
    denoiser only.
    """

    is_linear = False
    claims_nonexpansive = True

    def __init__(self, tau: float, transform: str = "orth_haar", levels: int = 1, axes=None):
        if tau < 0:
            raise ValueError("threshold must be nonnegative")
        if transform not in ("orth_haar", "uwt_haar"):
            raise ValueError(f"unknown transform {transform!r}")
        self.tau = float(tau)
        self.transform = transform
        self.levels = int(levels)
        self.axes = axes
        self.kind = "tdt_orth" if transform == "orth_haar" else "tdt_uwt"

    def analysis(self, z):
        if self.transform == "orth_haar":
            return haar_forward(z, self.levels, self.axes or (0, 1))
        return uwt_forward(z, self.levels, self.axes)

    def synthesis(self, c):
        if self.transform == "orth_haar":
            return haar_inverse(c, self.levels, self.axes or (0, 1))
        return uwt_inverse(c, self.levels, self.axes)

    def __call__(self, z):
        z = np.asarray(z)
        out = self.synthesis(soft_thresh(self.analysis(z), self.tau))
        return out.astype(np.result_type(z, np.float64), copy=False)


def denoise_tdt(z, tau, transform="orth_haar", levels=1):
    return TDTDenoiser(tau, transform, levels)(z)


# --------------------------------------------------------------------------
# symmetric linear smoothers
# --------------------------------------------------------------------------


def heat_kernel(shape, width: float) -> np.ndarray:
    """Periodic Gaussian-like blur whose DFT is ``prod exp(-2 w^2 sin^2(pi k / n))``.

    The spectrum lies in ``(0, 1]`` with value 1 at DC, so the circulant
    operator is symmetric, positive definite and nonexpansive.
    """
    spec = np.ones(tuple(shape))
    for ax, n in enumerate(shape):
        k = np.arange(n)
        s = np.exp(-2.0 * width**2 * np.sin(np.pi * k / n) ** 2)
        spec = spec * s.reshape([-1 if i == ax else 1 for i in range(len(shape))])
    return np.real(np.fft.ifftn(spec))


class LinearSymmetricDenoiser(Denoiser):
    """Circulant ``W z`` for a real, even kernel on the leading ``kernel.ndim`` axes.

    Attributes:
        eigenvalues: DFT of the kernel (the spectrum of ``W``).
        min_eig, max_eig: spectrum bounds; ``min_eig > 0`` is enforced.
    """

    kind = "linear_symmetric"
    is_linear = True

    def __init__(self, kernel, tol: float = 1e-12):
        k = np.asarray(kernel)
        if np.iscomplexobj(k):
            if np.max(np.abs(k.imag)) > tol:
                raise ValueError("kernel must be real")
            k = k.real
        k = k.astype(np.float64)
        flipped = np.roll(np.flip(k), 1, axis=tuple(range(k.ndim)))
        if np.max(np.abs(k - flipped)) > tol * max(1.0, np.max(np.abs(k))):
            raise ValueError("kernel is not even, W would not be symmetric")
        eig = np.fft.fftn(k)
        if np.max(np.abs(eig.imag)) > 1e-10:
            raise ValueError("kernel spectrum is not real")
        self.kernel = k
        self.eigenvalues = eig.real
        self.min_eig = float(self.eigenvalues.min())
        self.max_eig = float(self.eigenvalues.max())
        if self.min_eig <= 0:
            raise ValueError(f"W is singular or indefinite (min eigenvalue {self.min_eig:.3g})")
        self.claims_nonexpansive = self.max_eig <= 1.0 + 1e-12
        self._axes = tuple(range(k.ndim))

    def _shape_eig(self, z):
        if z.shape[: self.kernel.ndim] != self.kernel.shape:
            raise ValueError(f"input {z.shape} incompatible with kernel {self.kernel.shape}")
        return self.eigenvalues.reshape(self.kernel.shape + (1,) * (z.ndim - self.kernel.ndim))

    def __call__(self, z):
        z = np.asarray(z)
        out = np.fft.ifftn(np.fft.fftn(z, axes=self._axes) * self._shape_eig(z), axes=self._axes)
        return out if np.iscomplexobj(z) else out.real

    def apply_power(self, z, p: float):
        """``W^p z``; e.g. ``p=-1`` for the inverse."""
        z = np.asarray(z)
        e = self._shape_eig(z) ** p
        out = np.fft.ifftn(np.fft.fftn(z, axes=self._axes) * e, axes=self._axes)
        return out if np.iscomplexobj(z) else out.real


def denoise_linear(z, kernel):
    return LinearSymmetricDenoiser(kernel)(z)


# --------------------------------------------------------------------------
# exact MMSE denoiser under a Gaussian KDE prior
# --------------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Training vectors ``x_t`` (rows, real-isomorphic) and KDE bandwidth ``eta``."""

    points: np.ndarray
    eta: float
    _sq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if p.shape[0] < 1 or p.size == 0:
            raise ValueError("training set is empty")
        if not np.all(np.isfinite(p)):
            raise ValueError("training points must be finite")
        if not self.eta > 0:
            raise ValueError("KDE bandwidth eta must be positive")
        self.points = p
        self._sq = np.sum(p * p, axis=1)

    @property
    def T(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_eta(self, eta: float) -> "TrainingSet":
        return TrainingSet(self.points, eta)

    def log_weights(self, v):
        """Unnormalized ``-||v - x_t||^2 / (2 eta)`` for each training point."""
        d2 = self._sq - 2.0 * self.points @ v + v @ v
        return -np.maximum(d2, 0.0) / (2.0 * self.eta)


def _vectorize(z, dim):
    z = np.asarray(z)
    v = core.to_real(z) if np.iscomplexobj(z) else z.ravel().astype(np.float64)
    if v.size != dim:
        raise ValueError(f"input of size {v.size} (real-isomorphic) does not match training dim {dim}")
    return v


def _devectorize(v, like):
    like = np.asarray(like)
    if np.iscomplexobj(like):
        return core.from_real(v, like.shape)
    return v.reshape(like.shape)


def kde_log_density(ts: TrainingSet, v) -> float:
    """``ln p~(v; eta)`` for the Gaussian KDE with ``eta I`` kernels."""
    v = np.asarray(v, dtype=np.float64).ravel()
    d = ts.dim
    return float(logsumexp(ts.log_weights(v)) - math.log(ts.T) - 0.5 * d * math.log(2.0 * math.pi * ts.eta))


def _posterior_mean(ts: TrainingSet, v):
    lw = ts.log_weights(v)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    return w @ ts.points


def kde_score(ts: TrainingSet, v) -> np.ndarray:
    """``grad ln p~(v; eta)`` computed directly from the mixture."""
    v = np.asarray(v, dtype=np.float64).ravel()
    return (_posterior_mean(ts, v) - v) / ts.eta


class MMSEKDEDenoiser(Denoiser):
    """Posterior mean ``E[x | z]`` for ``x`` uniform on the training set, ``z = x + N(0, eta I)``.

    Works in the real-isomorphic space: complex inputs of size N need
    training vectors of length 2N.
    """

    kind = "mmse_kde"
    real_native = True

    def __init__(self, ts: TrainingSet):
        self.ts = ts

    def __call__(self, z):
        v = _vectorize(z, self.ts.dim)
        return _devectorize(_posterior_mean(self.ts, v), z)


def denoise_mmse_kde(z, ts: TrainingSet):
    return MMSEKDEDenoiser(ts)(z)


# --------------------------------------------------------------------------
# out-of-process denoiser
# --------------------------------------------------------------------------


class ExternalDenoiserError(RuntimeError):
    pass


class DenoiserExitError(ExternalDenoiserError):
    """The child exited with a nonzero status."""


class ProtocolError(ExternalDenoiserError):
    """The child's stdout is not exactly one well-formed tensor."""


class ShapeMismatchError(ExternalDenoiserError):
    """The child returned a tensor of a different shape."""


class ExternalDenoiser(Denoiser):
    """Run ``command`` once per call: tensor on stdin, tensor on stdout.

    ``eta`` (if given) is exported as ``DENOISER_ETA``.  Calls on one
    instance are serialized.
    """

    kind = "external"

    def __init__(self, command, eta=None, timeout=None, claims_nonexpansive=False):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.eta = eta
        self.timeout = timeout
        self.claims_nonexpansive = claims_nonexpansive
        self._lock = threading.Lock()

    def __call__(self, z):
        z = core.as_tensor(z, "denoiser input")
        env = dict(os.environ)
        if self.eta is not None:
            env["DENOISER_ETA"] = repr(float(self.eta))
        with self._lock:
            proc = subprocess.run(
                self.command,
                input=core.tensor_to_bytes(z),
                capture_output=True,
                env=env,
                timeout=self.timeout,
            )
        if proc.returncode != 0:
            msg = proc.stderr.decode("utf-8", "replace").strip()
            raise DenoiserExitError(f"denoiser exited with status {proc.returncode}: {msg}")
        try:
            out = core.tensor_from_bytes(proc.stdout)
        except core.TensorFormatError as exc:
            raise ProtocolError(f"bad denoiser output: {exc}") from None
        if out.shape != z.shape:
            raise ShapeMismatchError(f"denoiser returned shape {out.shape}, expected {z.shape}")
        return out


def denoise_external(z, command, eta=None):
    return ExternalDenoiser(command, eta)(z)


# --------------------------------------------------------------------------
# probes
# --------------------------------------------------------------------------


def fd_jacobian(f, z, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` in the real-isomorphic space.

    For real ``z`` the Jacobian is taken over the real entries only.
    """
    z = np.asarray(z)
    cplx = np.iscomplexobj(z)
    v0 = core.to_real(z) if cplx else z.ravel().astype(np.float64)

    def g(v):
        arg = core.from_real(v, z.shape) if cplx else v.reshape(z.shape)
        out = np.asarray(f(arg))
        return core.to_real(out) if cplx else np.real(out).ravel()

    n = v0.size
    J = np.empty((g(v0).size, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        J[:, j] = (g(v0 + e) - g(v0 - e)) / (2.0 * eps)
    return J


def probe_jacobian_symmetry(f, z, eps: float = 1e-6) -> float:
    """``||J - J^T||_F / ||J||_F`` of the finite-difference Jacobian."""
    J = fd_jacobian(f, z, eps)
    nrm = np.linalg.norm(J)
    return float(np.linalg.norm(J - J.T) / nrm) if nrm > 0 else 0.0


def probe_local_homogeneity(f, z, eps: float = 1e-3) -> float:
    """``||(1+eps) f(z) - f((1+eps) z)|| / ||f(z)||``; NaN when ``f(z) = 0``."""
    z = np.asarray(z)
    fz = np.asarray(f(z))
    nrm = np.linalg.norm(fz)
    if nrm == 0:
        return math.nan
    return float(np.linalg.norm((1 + eps) * fz - np.asarray(f((1 + eps) * z))) / nrm)


# --------------------------------------------------------------------------
# construction from JSON-style descriptions
# --------------------------------------------------------------------------


def denoiser_from_spec(spec, image_shape=None) -> Denoiser:
    """Build a denoiser from a dict such as ``{"kind": "tdt_uwt", "tau": 0.02}``.

    Kinds: ``identity``, ``tdt_orth`` / ``tdt_uwt`` (``tau``, ``levels``),
    ``linear_symmetric`` (``width``; the kernel spans the two spatial axes of
    ``image_shape``), ``external`` (``command``, optional ``eta``, ``timeout``).
    """
    if isinstance(spec, Denoiser):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"denoiser description needs a 'kind': {spec!r}")
    kind = spec["kind"]
    if kind == "identity":
        return Identity()
    if kind in ("tdt_orth", "tdt_uwt"):
        transform = "orth_haar" if kind == "tdt_orth" else "uwt_haar"
        return TDTDenoiser(float(spec.get("tau", 0.0)), transform, int(spec.get("levels", 1)))
    if kind == "linear_symmetric":
        if image_shape is None:
            raise ValueError("linear_symmetric needs the image shape")
        return LinearSymmetricDenoiser(heat_kernel(tuple(image_shape)[:2], float(spec["width"])))
    if kind == "external":
        return ExternalDenoiser(
            spec["command"],
            eta=spec.get("eta"),
            timeout=spec.get("timeout"),
            claims_nonexpansive=bool(spec.get("claims_nonexpansive", False)),
        )
    raise ValueError(f"unsupported denoiser kind {kind!r}")
