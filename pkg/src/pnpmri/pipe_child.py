"""Reference child for the pipe-denoiser protocol.

Reads one ``.ct`` tensor from stdin and writes one tensor of the same shape
to stdout::

    python -m pnpmri.pipe_child identity
    python -m pnpmri.pipe_child soft --tau 0.1
    python -m pnpmri.pipe_child tdt --tau 0.02 --transform uwt_haar
"""

import argparse
import sys

from . import core
from .denoisers import TDTDenoiser, soft_thresh


def main(argv=None):
    p = argparse.ArgumentParser(prog="pnpmri.pipe_child")
    p.add_argument("mode", choices=["identity", "soft", "tdt"])
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--transform", default="uwt_haar")
    p.add_argument("--levels", type=int, default=1)
    args = p.parse_args(argv)

    z = core.read_stream(sys.stdin.buffer)
    if args.mode == "identity":
        out = z
    elif args.mode == "soft":
        out = soft_thresh(z, args.tau)
    else:
        out = TDTDenoiser(args.tau, args.transform, args.levels)(z)
    core.write_stream(out, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
