"""Haar transforms: orthonormal (decimated) and undecimated tight frame.

The undecimated transform uses the filter pair ``(1, 1)/2`` and ``(1, -1)/2``
with periodic boundaries, applied separably along every requested axis.  Its
analysis operator ``Psi`` is tall with ``Psi^H Psi = I``.  Coefficients are
stacked along a new leading band axis; band 0 is the coarsest lowpass.
"""

import numpy as np

_SQRT2 = np.sqrt(2.0)


def _haar_1d(x, axis):
    x = np.moveaxis(x, axis, 0)
    a = (x[0::2] + x[1::2]) / _SQRT2
    d = (x[0::2] - x[1::2]) / _SQRT2
    return np.moveaxis(np.concatenate([a, d], axis=0), 0, axis)


def _ihaar_1d(c, axis):
    c = np.moveaxis(c, axis, 0)
    h = c.shape[0] // 2
    a, d = c[:h], c[h:]
    x = np.empty_like(c)
    x[0::2] = (a + d) / _SQRT2
    x[1::2] = (a - d) / _SQRT2
    return np.moveaxis(x, 0, axis)


def _check_levels(shape, axes, levels):
    for ax in axes:
        n = shape[ax]
        if n % (2**levels):
            raise ValueError(f"axis {ax} of length {n} is not divisible by 2**{levels}")


def haar_forward(x, levels=1, axes=(0, 1)):
    """Orthonormal multi-level Haar analysis in Mallat layout.

    Each level transforms the current lowpass block in place; the output has
    the input's shape.
    """
    x = np.asarray(x)
    _check_levels(x.shape, axes, levels)
    c = x.astype(np.result_type(x, np.float64), copy=True)
    sub = [slice(None)] * c.ndim
    for _ in range(levels):
        block = c[tuple(sub)]
        for ax in axes:
            block = _haar_1d(block, ax)
        c[tuple(sub)] = block
        for ax in axes:
            sub[ax] = slice(0, block.shape[ax] // 2)
    return c


def haar_inverse(c, levels=1, axes=(0, 1)):
    c = np.asarray(c)
    _check_levels(c.shape, axes, levels)
    x = c.copy()
    for lev in reversed(range(levels)):
        sub = [slice(None)] * x.ndim
        for ax in axes:
            sub[ax] = slice(0, x.shape[ax] // 2**lev)
        block = x[tuple(sub)]
        for ax in reversed(axes):
            block = _ihaar_1d(block, ax)
        x[tuple(sub)] = block
    return x


def _split(x, axis, s):
    shifted = np.roll(x, -s, axis=axis)
    return (x + shifted) / 2.0, (x - shifted) / 2.0


def _merge(lo, hi, axis, s):
    return (lo + np.roll(lo, s, axis=axis)) / 2.0 + (hi - np.roll(hi, s, axis=axis)) / 2.0


def uwt_forward(x, levels=1, axes=None):
    """Undecimated (a trous) Haar analysis.

    Returns an array of shape ``(1 + levels * (2**d - 1),) + x.shape`` where
    ``d = len(axes)``.  ``axes`` defaults to every axis of ``x``.
    """
    x = np.asarray(x)
    axes = tuple(range(x.ndim)) if axes is None else tuple(axes)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    details = []
    lo = x
    for lev in range(levels):
        s = 2**lev
        bands = [lo]
        for ax in axes:
            nxt = []
            for b in bands:
                l, h = _split(b, ax, s)
                nxt.extend([l, h])
            bands = nxt
        lo = bands[0]
        details.append(bands[1:])
    out = [lo]
    for d in reversed(details):
        out.extend(d)
    return np.stack(out)


def uwt_inverse(c, levels=1, axes=None):
    """Adjoint of :func:`uwt_forward` (and its left inverse)."""
    c = np.asarray(c)
    ndim = c.ndim - 1
    axes = tuple(range(ndim)) if axes is None else tuple(axes)
    per = 2 ** len(axes) - 1
    if c.shape[0] != 1 + levels * per:
        raise ValueError(f"expected {1 + levels * per} bands, got {c.shape[0]}")
    lo = c[0]
    pos = 1
    for lev in reversed(range(levels)):
        s = 2**lev
        bands = [lo] + list(c[pos : pos + per])
        pos += per
        for ax in reversed(axes):
            bands = [_merge(bands[2 * i], bands[2 * i + 1], ax, s) for i in range(len(bands) // 2)]
        lo = bands[0]
    return lo
