"""Command-line entry point.

Exit codes: 0 on success, 1 on usage or input errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import amp, core, harness
from .denoisers import denoiser_from_spec
from .linops import load_model
from .pnp import PnPConfig, solve
from .red import RedConfig, red_solve

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_rows(rows, header, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read {path}: {e}") from e


def cmd_simulate(args):
    spec = harness.ExperimentSpec.from_dict(_load_json(args.spec))
    if spec.solvers:
        rows = harness.run_experiment(spec, args.out)
        _write_rows(rows, ["name", "rsnr_db", "nmse_db", "iters"])
    else:
        data = harness.simulate(spec, args.out)
        _write_rows([{"sigma2": data.sigma2, "M_per_frame": data.A.pattern.M_per_frame}], ["sigma2", "M_per_frame"])


def cmd_recon(args):
    doc = _load_json(args.config)
    A = load_model(args.model)
    y = core.read_tensor(args.y)
    ref = core.read_tensor(args.ref) if args.ref else None
    doc = dict(doc)
    kind = doc.pop("kind", "pnp")
    doc.pop("name", None)
    if doc.get("sigma2") in (None, "model", "noise"):
        doc["sigma2"] = A.sigma2
    if kind == "pnp":
        cfg = PnPConfig.from_dict(doc, A.image_shape)
        res = solve(y, A, cfg, x_ref=ref)
    elif kind == "red":
        if isinstance(doc.get("denoiser"), dict):
            doc["denoiser"] = denoiser_from_spec(doc["denoiser"], A.image_shape)
        res = red_solve(y, A, RedConfig(**doc), x_ref=ref)
    else:
        raise UsageError(f"unknown solver kind {kind!r}")
    os.makedirs(args.out, exist_ok=True)
    core.write_tensor(res.x, os.path.join(args.out, "xhat.ct"))
    res.trace.to_csv(os.path.join(args.out, "trace.csv"), timing=not args.no_timing)
    row = {"iters": len(res.trace), "status": res.status}
    header = ["iters", "status"]
    if ref is not None:
        m = core.rsnr(ref, res.x)
        row.update(rsnr_db=m.rsnr_db, nmse_db=m.nmse_db)
        header += ["rsnr_db", "nmse_db"]
    _write_rows([row], header)


def cmd_evaluate(args):
    m = core.rsnr(core.read_tensor(args.ref), core.read_tensor(args.est))
    _write_rows([{"rsnr_db": m.rsnr_db, "nmse_db": m.nmse_db}], ["rsnr_db", "nmse_db"])


def cmd_amp_bench(args):
    """Spec keys: ``M``, ``N``, ``rho``, ``sigma2``, ``iters``, ``c``, ``seeds``, ``mc_samples``, ``onsager``."""
    d = _load_json(args.spec)
    M, N = int(d.get("M", 1000)), int(d.get("N", 2000))
    prior = amp.BernoulliGaussian(float(d.get("rho", 0.1)))
    sigma2 = float(d.get("sigma2", 1e-4))
    iters = int(d.get("iters", 10))
    fam = amp.SoftThresholdFamily(float(d.get("c", 1.14)))
    seeds = list(d.get("seeds", range(10)))
    se = amp.state_evolution(prior, fam, sigma2, M, N, iters, int(d.get("mc_samples", 200000)), int(d.get("se_seed", 0)))
    emp = np.full((len(seeds), iters), np.nan)
    nmse = np.full((len(seeds), iters), np.nan)
    status = "ok"
    for i, s in enumerate(seeds):
        A, x0, y = amp.make_instance(M, N, prior, sigma2, int(s))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", amp.DivergenceWarning)
            r = amp.damp_run(y, A, fam, iters, x_true=x0, onsager=bool(d.get("onsager", True)), se_etas=se, seed=int(s))
        if r.status != "ok":
            status = r.status
        n = len(r.etas)
        emp[i, :n] = r.etas
        nmse[i, :n] = r.trace.column("nmse_db")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            r.trace.to_csv(os.path.join(args.out, f"amp_seed{s}.csv"))
    def col_mean(a):
        # iterations after a divergence stop are nan for that seed
        ok = np.isfinite(a)
        return float(a[ok].mean()) if ok.any() else float("nan")

    rows = [
        {"iter": k + 1, "empirical_eta": col_mean(emp[:, k]), "se_eta": float(se[k]), "nmse_db": col_mean(nmse[:, k])}
        for k in range(iters)
    ]
    _write_rows(rows, ["iter", "empirical_eta", "se_eta", "nmse_db"])
    if status != "ok":
        raise core.NumericalError(f"D-AMP run {status}")


def build_parser():
    p = _Parser(prog="pnpmri", description="Plug-and-play MRI reconstruction toolkit")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate data and run the solvers listed in the spec file")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("recon", help="reconstruct from measurements")
    r.add_argument("--config", required=True)
    r.add_argument("--y", required=True)
    r.add_argument("--model", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--ref", help="ground truth for NMSE tracing")
    r.add_argument("--no-timing", action="store_true", help="blank the seconds column")
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("evaluate", help="rSNR and NMSE of an estimate")
    e.add_argument("--ref", required=True)
    e.add_argument("--est", required=True)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("amp-bench", help="D-AMP versus state evolution")
    a.add_argument("--spec", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_amp_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except core.NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, core.TensorFormatError, ValueError, KeyError, TypeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
