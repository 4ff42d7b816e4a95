import json
import warnings

import numpy as np
import pytest

from pnpmri import core, denoisers as dn, pnp
from pnpmri.equilibrium import ce_u_formula, pnp_fp1_residual
from conftest import dense_forward, dense_linear, random_model


def heat(A, width=0.8):
    return dn.LinearSymmetricDenoiser(dn.heat_kernel(A.image_shape[:2], width))


def dense_pnp_fixed_point(A, W, y, eta, sigma2):
    """Solve ``x = W (x - c A^H (A x - y))`` with ``c = eta / sigma2`` as one dense system."""
    D = dense_forward(A)
    Wm = dense_linear(W, A.image_shape)
    c = eta / sigma2
    n = D.shape[1]
    lhs = np.eye(n) - Wm + c * Wm @ D.conj().T @ D
    rhs = c * Wm @ D.conj().T @ y.ravel()
    return np.linalg.solve(lhs, rhs).reshape(A.image_shape)


def dense_least_squares(A, y):
    D = dense_forward(A)
    return np.linalg.lstsq(D, y.ravel(), rcond=None)[0].reshape(A.image_shape)


@pytest.fixture
def problem():
    A = random_model(4, 4, 2, 2, lines=3, seed=3)
    r = core.Rng(4)
    x = r.complex_normal(A.image_shape)
    y = A.forward(x) + 0.1 * r.complex_normal(A.data_shape)
    return A, x, y


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestIdentityReduction:
    def test_all_solvers_reach_least_squares(self, problem):
        A, _, y = problem
        ls = dense_least_squares(A, y)
        outs = {}
        for algo in ("admm", "fista", "pds"):
            cfg = pnp.PnPConfig(algo=algo, max_iters=3000, inner="exact", denoiser=dn.Identity())
            res = pnp.solve(y, A, cfg)
            outs[algo] = res.x
            assert np.linalg.norm(A.adjoint(A.forward(res.x) - y)) <= 1e-6
            assert rel(res.x, ls) <= 1e-6
        assert rel(outs["admm"], outs["fista"]) <= 1e-6
        assert rel(outs["pds"], outs["fista"]) <= 1e-6

    def test_admm_u_vanishes(self, problem):
        A, _, y = problem
        res = pnp.pnp_admm(y, A, pnp.PnPConfig(max_iters=500, inner="exact", denoiser=dn.Identity()))
        assert np.max(np.abs(res.u)) <= 1e-12


class TestFixedPoint:
    @pytest.fixture
    def fp(self, problem):
        A, _, y = problem
        W = heat(A)
        eta = 0.6
        return A, y, W, eta, dense_pnp_fixed_point(A, W, y, eta, 1.0)

    def test_oracle_satisfies_fp1(self, fp):
        A, y, W, eta, x0 = fp
        assert pnp_fp1_residual(x0, y, A, W, eta, 1.0) <= 1e-12

    def test_admm_hold(self, fp):
        A, y, W, eta, x0 = fp
        cfg = pnp.PnPConfig(eta=eta, max_iters=10, inner="exact", denoiser=W)
        res = pnp.pnp_admm(y, A, cfg, v0=x0, u0=ce_u_formula(x0, y, A, eta, 1.0))
        assert rel(res.x, x0) <= 1e-10

    def test_fista_hold(self, fp):
        A, y, W, _, _ = fp
        eta = 0.5 / A.norm() ** 2
        x0 = dense_pnp_fixed_point(A, W, y, eta, 1.0)
        res = pnp.pnp_fista(y, A, pnp.PnPConfig(algo="fista", eta=eta, max_iters=10, denoiser=W), x0=x0)
        assert rel(res.x, x0) <= 1e-10

    def test_pds_hold(self, fp):
        A, y, W, eta, x0 = fp
        res = pnp.pnp_pds(y, A, pnp.PnPConfig(algo="pds", eta=eta, max_iters=10, denoiser=W), x0=x0)
        assert rel(res.x, x0) <= 1e-10

    def test_cross_solver_agreement(self, fp):
        A, y, W, _, _ = fp
        eta = 0.8 / A.norm() ** 2  # legal for FISTA, shared by all three
        oracle = dense_pnp_fixed_point(A, W, y, eta, 1.0)
        outs = []
        for algo in ("admm", "fista", "pds"):
            cfg = pnp.PnPConfig(algo=algo, eta=eta, max_iters=3000, inner="exact", denoiser=W)
            outs.append(pnp.solve(y, A, cfg).x)
            assert rel(outs[-1], oracle) <= 1e-8
        for i in range(3):
            for j in range(i):
                assert rel(outs[i], outs[j]) <= 1e-4

    def test_admm_u_matches_formula(self, fp):
        A, y, W, eta, _ = fp
        res = pnp.pnp_admm(y, A, pnp.PnPConfig(eta=eta, max_iters=2000, inner="exact", denoiser=W))
        assert np.linalg.norm(res.u - ce_u_formula(res.x, y, A, eta, 1.0)) <= 1e-5


class TestTrace:
    def test_length_columns_and_decrease(self, problem):
        A, x, y = problem
        cfg = pnp.PnPConfig(max_iters=40, denoiser=heat(A))
        res = pnp.pnp_admm(y, A, cfg, x_ref=x)
        assert len(res.trace) == 40
        assert res.trace.columns[:5] == ("iter", "nmse_db", "data_fidelity", "ce_res_h", "ce_res_f")
        # v = f(x + u) makes r_f vanish for ADMM; r_h carries the consensus gap
        assert np.max(res.trace.column("ce_res_f")) <= 1e-12
        rh = res.trace.column("ce_res_h")
        assert np.all(np.isfinite(rh)) and rh[-1] < 1e-2 * rh[0]
        assert np.all(np.isfinite(res.trace.column("nmse_db")))

    def test_csv(self, problem, tmp_path):
        A, _, y = problem
        cfg = pnp.PnPConfig(algo="fista", max_iters=5, denoiser=heat(A), timing=False)
        res = pnp.pnp_fista(y, A, cfg)
        p = tmp_path / "t.csv"
        res.trace.to_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "iter,nmse_db,data_fidelity,ce_res_h,ce_res_f,seconds"
        assert len(lines) == 6 and lines[1].startswith("1,,") and lines[1].endswith(",")

    def test_early_stop(self, problem):
        A, _, y = problem
        res = pnp.pnp_admm(y, A, pnp.PnPConfig(max_iters=5000, tol=1e-9, inner="exact", denoiser=heat(A)))
        assert res.status == "converged" and len(res.trace) < 5000

    def test_unpacking(self, problem):
        A, _, y = problem
        x, u, trace = pnp.pnp_admm(y, A, pnp.PnPConfig(max_iters=2, denoiser=dn.Identity()))
        assert x.shape == u.shape == A.image_shape and len(trace) == 2


class TestBFISTA:
    def test_alias_iterates(self, problem):
        A, _, y = problem
        A = random_model(8, 8, 2, 2, lines=4, seed=5)
        y = A.forward(core.Rng(1).complex_normal(A.image_shape))
        lam = 0.05
        for k in (1, 2, 5, 9):
            a = pnp.bfista(y, A, pnp.PnPConfig(algo="bfista", lam=lam, max_iters=k)).x
            cfg = pnp.PnPConfig(algo="fista", max_iters=k, denoiser=dn.TDTDenoiser(lam, "uwt_haar"))
            b = pnp.pnp_fista(y, A, cfg).x
            assert np.max(np.abs(a - b)) <= 1e-14

    def test_zero_lambda_is_accelerated_least_squares(self, problem):
        A, _, y = problem
        a = pnp.bfista(y, A, pnp.PnPConfig(algo="bfista", lam=0.0, max_iters=20)).x
        b = pnp.pnp_fista(y, A, pnp.PnPConfig(algo="fista", max_iters=20, denoiser=dn.Identity())).x
        assert np.max(np.abs(a - b)) <= 1e-14

    def test_rejects_other_denoiser(self, problem):
        A, _, y = problem
        with pytest.raises(ValueError):
            pnp.bfista(y, A, pnp.PnPConfig(algo="bfista", denoiser=dn.Identity()))


class TestValidation:
    def test_field_errors(self):
        for bad in ({"algo": "sgd"}, {"eta": 0.0}, {"sigma2": -1.0}, {"lam": -0.1}, {"max_iters": 0},
                    {"gamma": 1.0}, {"init": "random"}, {"inner": "cg(0)"}):
            with pytest.raises(ValueError):
                pnp.PnPConfig(**bad)

    def test_fista_step_bound(self, problem):
        A, _, y = problem
        bound = 1.0 / A.norm() ** 2
        with pytest.raises(ValueError):
            pnp.pnp_fista(y, A, pnp.PnPConfig(algo="fista", eta=bound, denoiser=dn.Identity()))
        assert pnp.PnPConfig(algo="fista").resolved(A).eta == pytest.approx(0.9 * bound, rel=1e-12)

    def test_pds_gamma_bound(self, problem):
        A, _, y = problem
        bound = 1.0 / (1.0 + 1.0 / A.norm() ** 2)
        with pytest.raises(ValueError):
            pnp.pnp_pds(y, A, pnp.PnPConfig(algo="pds", eta=1.0, gamma=min(0.999, bound * 1.01)))
        assert pnp.PnPConfig(algo="pds").resolved(A).gamma == pytest.approx(bound, rel=1e-12)

    def test_nan_abort(self, problem):
        A, _, y = problem
        nan = dn.FunctionDenoiser(lambda z: np.full_like(z, np.nan), claims_nonexpansive=True)
        for algo in ("admm", "fista", "pds"):
            with pytest.raises(core.NumericalError):
                pnp.solve(y, A, pnp.PnPConfig(algo=algo, max_iters=3, denoiser=nan))

    def test_nonexpansive_warning(self, problem):
        A, _, y = problem
        with pytest.warns(pnp.NonexpansiveWarning):
            pnp.pnp_admm(y, A, pnp.PnPConfig(max_iters=1, denoiser=lambda z: 0.5 * z))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pnp.pnp_admm(y, A, pnp.PnPConfig(max_iters=1, denoiser=dn.Identity()))

    def test_init_shape(self, problem):
        A, _, y = problem
        with pytest.raises(ValueError):
            pnp.pnp_admm(y, A, pnp.PnPConfig(init=np.zeros((2, 2)), denoiser=dn.Identity()))


class TestConfigDocument:
    def test_from_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"algo": "bfista", "lambda": 0.01, "max_iters": 7,
                                 "denoiser": {"kind": "tdt_uwt", "tau": 0.01}}))
        cfg = pnp.PnPConfig.from_json(p)
        assert cfg.algo == "bfista" and cfg.lam == 0.01 and cfg.max_iters == 7
        assert cfg.denoiser.kind == "tdt_uwt"

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            pnp.PnPConfig.from_dict({"algo": "admm", "rho": 2})
