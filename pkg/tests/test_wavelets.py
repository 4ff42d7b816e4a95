import numpy as np
import pytest

from pnpmri import core
from pnpmri.wavelets import haar_forward, haar_inverse, uwt_forward, uwt_inverse
from conftest import haar_matrix_1d


def test_haar_matches_kronecker_matrix():
    x = core.Rng(0).complex_normal((8, 6))
    H = np.kron(haar_matrix_1d(8), haar_matrix_1d(6))
    np.testing.assert_allclose(haar_forward(x).ravel(), H @ x.ravel(), atol=1e-14)


@pytest.mark.parametrize("levels", [1, 2, 3])
def test_haar_perfect_reconstruction(levels):
    x = core.Rng(levels).complex_normal((8, 8, 3))
    c = haar_forward(x, levels)
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), rel=1e-14)
    assert np.max(np.abs(haar_inverse(c, levels) - x)) <= 1e-14


def test_haar_rejects_indivisible():
    with pytest.raises(ValueError):
        haar_forward(np.zeros((6, 8)), levels=2)


@pytest.mark.parametrize("shape,levels", [((8, 8), 1), ((8, 4, 4), 1), ((16, 8), 2), ((6, 10, 3), 1)])
def test_uwt_tight_frame(shape, levels):
    r = core.Rng(1)
    x = r.complex_normal(shape)
    c = uwt_forward(x, levels)
    assert c.shape == (1 + levels * (2 ** len(shape) - 1),) + shape
    assert np.max(np.abs(uwt_inverse(c, levels) - x)) <= 1e-12
    # Psi^H Psi = I also gives ||Psi x|| = ||x||
    assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(x), rel=1e-12)


def test_uwt_inverse_is_adjoint():
    r = core.Rng(2)
    x = r.complex_normal((4, 6, 2))
    c = r.complex_normal((1 + 2 * 7, 4, 6, 2))
    lhs = np.vdot(c, uwt_forward(x, 2))
    rhs = np.vdot(uwt_inverse(c, 2), x)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)
