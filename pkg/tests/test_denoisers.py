import math
import sys

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from pnpmri import core, denoisers as dn
from conftest import dense_linear, haar_matrix_1d


class TestSoftThresh:
    def test_real(self):
        assert dn.soft_thresh(np.array([2.0]), 0.5)[0] == pytest.approx(1.5)

    def test_complex(self):
        out = dn.soft_thresh(np.array([3 + 4j]), 1.0)[0]
        assert out == pytest.approx((3 + 4j) * 4 / 5, abs=1e-15)

    def test_below_threshold_is_zero(self):
        u = core.Rng(0).complex_normal(500)
        tau = 0.8
        out = dn.soft_thresh(u, tau)
        assert np.all(out[np.abs(u) <= tau] == 0)

    def test_zero_maps_to_zero(self):
        assert dn.soft_thresh(np.zeros(3, dtype=complex), 0.0).tolist() == [0, 0, 0]

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            dn.soft_thresh(np.ones(2), -0.1)


def dense_l1_prox_oracle(z, lam, eta, iters=20000):
    """ADMM on ``lam ||H x||_1 + ||x - z||^2 / (2 eta)`` with an explicit Haar matrix ``H``."""
    nx, ny = z.shape
    H = np.kron(haar_matrix_1d(nx), haar_matrix_1d(ny))
    zv = z.ravel()
    rho = 1.0
    K = np.linalg.inv(np.eye(zv.size) / eta + rho * H.T @ H)
    c = H @ zv
    d = np.zeros_like(c)
    for _ in range(iters):
        x = K @ (zv / eta + rho * H.T @ (c - d))
        c = dn.soft_thresh(H @ x + d, lam / rho)
        d = d + H @ x - c
    return x.reshape(z.shape)


def orth_subgradient_residual(x, z, lam, eta):
    """Distance of ``0`` from ``lam Psi^H d||Psi x||_1 + (x - z)/eta`` for orthonormal ``Psi``."""
    c = dn.TDTDenoiser(0.0).analysis(x)
    w = dn.TDTDenoiser(0.0).analysis(z)
    g = (c - w) / eta
    nz = np.abs(c) > 1e-12
    r = np.zeros(c.shape)
    r[nz] = np.abs(g[nz] + lam * c[nz] / np.abs(c[nz]))
    r[~nz] = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(np.linalg.norm(r))


class TestTDT:
    def test_zero_threshold_is_identity(self):
        z = core.Rng(0).complex_normal((8, 8, 2))
        for tr in ("orth_haar", "uwt_haar"):
            assert np.max(np.abs(dn.denoise_tdt(z, 0.0, tr) - z)) <= 1e-14

    def test_orth_equals_dense_prox(self):
        z = core.Rng(1).complex_normal((8, 8))
        lam, eta = 0.3, 0.7
        out = dn.denoise_tdt(z, lam * eta, "orth_haar")
        oracle = dense_l1_prox_oracle(z, lam, eta)
        assert np.max(np.abs(out - oracle)) <= 1e-8

    @pytest.mark.parametrize("seed", range(5))
    def test_orth_subgradient_optimality(self, seed):
        r = core.Rng(seed)
        z = r.complex_normal((8, 8))
        lam, eta = 0.2 + r.random(), 0.5 + r.random()
        x = dn.denoise_tdt(z, lam * eta, "orth_haar")
        assert orth_subgradient_residual(x, z, lam, eta) <= 1e-8

    def test_uwt_roundtrip(self):
        f = dn.TDTDenoiser(0.0, "uwt_haar")
        z = core.Rng(2).complex_normal((8, 8, 4))
        assert np.max(np.abs(f.synthesis(f.analysis(z)) - z)) <= 1e-12

    def test_incompatible_shape(self):
        with pytest.raises(ValueError):
            dn.denoise_tdt(np.zeros((7, 8)), 0.1, "orth_haar")

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), tau=st.floats(0.0, 2.0), uwt=st.booleans())
    def test_nonexpansive(self, seed, tau, uwt):
        r = core.Rng(seed)
        z1, z2 = r.complex_normal((8, 8, 2)), r.complex_normal((8, 8, 2))
        f = dn.TDTDenoiser(tau, "uwt_haar" if uwt else "orth_haar")
        assert np.linalg.norm(f(z1) - f(z2)) <= np.linalg.norm(z1 - z2) * (1 + 1e-12)

    def test_metadata(self):
        assert dn.TDTDenoiser(0.1, "orth_haar").kind == "tdt_orth"
        assert dn.TDTDenoiser(0.1, "uwt_haar").kind == "tdt_uwt"
        assert dn.TDTDenoiser(0.1).claims_nonexpansive


def circulant(kernel):
    n = kernel.size
    return np.array([[kernel[(i - j) % n] for j in range(n)] for i in range(n)])


class TestLinear:
    def test_identity_kernel(self):
        k = np.zeros(8)
        k[0] = 1.0
        z = core.Rng(0).complex_normal(8)
        np.testing.assert_allclose(dn.denoise_linear(z, k), z, atol=1e-15)

    def test_dense_circulant_oracle(self):
        k = dn.heat_kernel((8,), 1.3)
        z = core.Rng(1).complex_normal(8)
        assert np.max(np.abs(dn.denoise_linear(z, k) - circulant(k) @ z)) <= 1e-12

    def test_materialized_matrix_is_symmetric(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((4, 4), 0.8))
        J = dn.fd_jacobian(W, core.Rng(2).complex_normal((4, 4)))
        assert np.max(np.abs(J - J.T)) <= 1e-9
        M = dense_linear(W, (4, 4))
        assert np.max(np.abs(M - M.T)) <= 1e-12

    def test_homogeneity(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((8,), 1.0))
        z = core.Rng(3).complex_normal(8)
        assert dn.probe_local_homogeneity(W, z, 1e-3) <= 1e-12

    def test_rejects_nonsymmetric(self):
        k = np.zeros(8)
        k[0], k[1] = 0.5, 0.5
        with pytest.raises(ValueError):
            dn.LinearSymmetricDenoiser(k)

    def test_rejects_singular(self):
        k = np.zeros(8)
        k[0] = 0.5
        k[1] = k[-1] = 0.25  # spectrum cos^2, zero at Nyquist
        with pytest.raises(ValueError):
            dn.LinearSymmetricDenoiser(k)

    def test_spectrum_and_nonexpansive(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((6, 6), 1.5))
        assert 0 < W.min_eig <= W.max_eig <= 1.0 + 1e-12
        assert W.claims_nonexpansive
        v = core.Rng(4).complex_normal((6, 6))
        for _ in range(200):
            v = W(v)
            v /= np.linalg.norm(v)
        assert np.linalg.norm(W(v)) <= 1.0 + 1e-12

    def test_apply_power_inverts(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((8, 8), 0.9))
        z = core.Rng(5).complex_normal((8, 8, 2))
        np.testing.assert_allclose(W.apply_power(W(z), -1.0), z, atol=1e-10)


def brute_force_mmse(points, eta, z):
    mpmath.mp.dps = 40
    num = [mpmath.mpf(0)] * points.shape[1]
    den = mpmath.mpf(0)
    zz = [mpmath.mpf(float(v)) for v in z]
    for p in points:
        d2 = sum((mpmath.mpf(float(a)) - b) ** 2 for a, b in zip(p, zz))
        w = mpmath.exp(-d2 / (2 * mpmath.mpf(eta)))
        den += w
        num = [n + w * mpmath.mpf(float(a)) for n, a in zip(num, p)]
    return np.array([float(n / den) for n in num])


class TestMMSEKDE:
    def test_single_point(self):
        pts = core.Rng(0).standard_normal((1, 4))
        ts = dn.TrainingSet(pts, 0.5)
        for z in core.Rng(1).standard_normal((5, 4)):
            np.testing.assert_array_equal(dn.denoise_mmse_kde(z, ts), pts[0])

    def test_equidistant_gives_average(self):
        pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
        out = dn.denoise_mmse_kde(np.array([0.0, 3.0]), dn.TrainingSet(pts, 0.3))
        np.testing.assert_allclose(out, [0.0, 0.0], atol=1e-15)

    def test_brute_force_oracle(self):
        r = core.Rng(2)
        pts = r.standard_normal((5, 4))
        ts = dn.TrainingSet(pts, 0.4)
        for z in r.standard_normal((4, 4)) * 1.5:
            assert np.max(np.abs(dn.denoise_mmse_kde(z, ts) - brute_force_mmse(pts, 0.4, z))) <= 1e-10

    def test_stable_far_from_data(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0]])
        out = dn.denoise_mmse_kde(np.array([1e4, 0.0]), dn.TrainingSet(pts, 0.01))
        np.testing.assert_allclose(out, [1.0, 0.0])

    def test_complex_input_uses_real_isomorphism(self):
        r = core.Rng(3)
        pts = r.standard_normal((5, 8))
        ts = dn.TrainingSet(pts, 0.6)
        z = r.complex_normal((2, 2))
        out = dn.MMSEKDEDenoiser(ts)(z)
        assert out.shape == z.shape and np.iscomplexobj(out)
        np.testing.assert_allclose(core.to_real(out), dn.denoise_mmse_kde(core.to_real(z), ts), atol=1e-15)

    def test_convex_hull(self):
        r = core.Rng(4)
        pts = r.standard_normal((5, 3))
        ts = dn.TrainingSet(pts, 0.7)
        for z in r.standard_normal((6, 3)) * 2:
            f = dn.denoise_mmse_kde(z, ts)
            A_eq = np.vstack([pts.T, np.ones(5)])
            feas = linprog(np.zeros(5), A_eq=A_eq, b_eq=np.append(f, 1.0), bounds=[(0, None)] * 5)
            assert feas.status == 0

    def test_empty_and_bad_eta(self):
        with pytest.raises(ValueError):
            dn.TrainingSet(np.zeros((0, 3)), 1.0)
        with pytest.raises(ValueError):
            dn.TrainingSet(np.zeros((2, 3)), 0.0)


class TestProbes:
    def test_linear_symmetric_score(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((8,), 1.0))
        assert dn.probe_jacobian_symmetry(W, core.Rng(0).standard_normal(8)) <= 1e-6

    def test_mmse_score(self):
        r = core.Rng(1)
        ts = dn.TrainingSet(r.standard_normal((5, 4)), 0.5)
        f = dn.MMSEKDEDenoiser(ts)
        assert dn.probe_jacobian_symmetry(f, r.standard_normal(4)) <= 1e-4

    def test_asymmetric_counterexample(self):
        W = dn.LinearSymmetricDenoiser(dn.heat_kernel((8,), 1.0))

        def f(z):
            return np.roll(W(z), 1)

        assert dn.probe_jacobian_symmetry(f, core.Rng(2).standard_normal(8)) > 0.1

    def test_tdt_homogeneity(self):
        tau = 0.5
        f = dn.TDTDenoiser(tau, "orth_haar")
        # coefficients just above the threshold move the most under scaling
        c = np.full((4, 4), tau * 1.0005)
        z = f.synthesis(c)
        assert dn.probe_local_homogeneity(f, z, 1e-3) > 0.1
        assert dn.probe_local_homogeneity(dn.TDTDenoiser(0.0), z, 1e-3) <= 1e-12

    def test_zero_output_sentinel(self):
        f = dn.TDTDenoiser(10.0)
        assert math.isnan(dn.probe_local_homogeneity(f, np.full((2, 2), 0.1)))


CHILD = [sys.executable, "-m", "pnpmri.pipe_child"]


def script(tmp_path, body):
    p = tmp_path / "child.py"
    p.write_text(body)
    return [sys.executable, str(p)]


class TestExternal:
    def test_identity(self):
        z = core.Rng(0).complex_normal((4, 4, 2))
        assert np.array_equal(dn.denoise_external(z, CHILD + ["identity"]), z)

    def test_soft_matches_in_process(self):
        z = core.Rng(1).complex_normal((3, 5))
        out = dn.denoise_external(z, CHILD + ["soft", "--tau", "0.4"])
        assert np.max(np.abs(out - dn.soft_thresh(z, 0.4))) <= 1e-12

    def test_tdt_child_and_string_command(self):
        z = core.Rng(2).complex_normal((4, 4, 2))
        cmd = " ".join(CHILD) + " tdt --tau 0.1 --transform uwt_haar"
        out = dn.ExternalDenoiser(cmd)(z)
        np.testing.assert_allclose(out, dn.TDTDenoiser(0.1, "uwt_haar")(z), atol=1e-15)

    def test_eta_is_exported(self, tmp_path):
        cmd = script(
            tmp_path,
            "import os, sys\nfrom pnpmri import core\n"
            "z = core.read_stream(sys.stdin.buffer)\n"
            "core.write_stream(z * float(os.environ['DENOISER_ETA']), sys.stdout.buffer)\n",
        )
        z = np.ones((2, 2), dtype=complex)
        np.testing.assert_allclose(dn.ExternalDenoiser(cmd, eta=0.25)(z), 0.25 * z)

    def test_wrong_shape(self, tmp_path):
        cmd = script(
            tmp_path,
            "import sys, numpy as np\nfrom pnpmri import core\n"
            "core.read_stream(sys.stdin.buffer)\n"
            "core.write_stream(np.zeros((3, 3), complex), sys.stdout.buffer)\n",
        )
        with pytest.raises(dn.ShapeMismatchError):
            dn.denoise_external(np.zeros((2, 2)), cmd)

    def test_nonzero_exit(self, tmp_path):
        cmd = script(tmp_path, "import sys\nsys.stdin.buffer.read()\nsys.exit(3)\n")
        with pytest.raises(dn.DenoiserExitError):
            dn.denoise_external(np.zeros((2, 2)), cmd)

    def test_protocol_violation(self, tmp_path):
        cmd = script(tmp_path, "import sys\nsys.stdin.buffer.read()\nsys.stdout.write('garbage')\n")
        with pytest.raises(dn.ProtocolError):
            dn.denoise_external(np.zeros((2, 2)), cmd)

    def test_errors_are_distinct(self):
        kinds = {dn.DenoiserExitError, dn.ProtocolError, dn.ShapeMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, dn.ExternalDenoiserError) for k in kinds)


def test_denoiser_from_spec():
    assert isinstance(dn.denoiser_from_spec({"kind": "identity"}), dn.Identity)
    f = dn.denoiser_from_spec({"kind": "tdt_uwt", "tau": 0.1, "levels": 2})
    assert f.kind == "tdt_uwt" and f.levels == 2
    W = dn.denoiser_from_spec({"kind": "linear_symmetric", "width": 1.0}, (8, 8, 2))
    assert W.kernel.shape == (8, 8)
    with pytest.raises(ValueError):
        dn.denoiser_from_spec({"kind": "cnn"})
