"""Plug-and-play and RED reconstruction for multi-coil Cartesian MRI."""

from . import amp, convex, core, denoisers, equilibrium, harness, linops, pnp, red
from .core import Metrics, NumericalError, Rng, read_tensor, rsnr, write_tensor
from .denoisers import Identity, LinearSymmetricDenoiser, MMSEKDEDenoiser, TDTDenoiser, TrainingSet
from .equilibrium import CEState, mann_solve
from .linops import CoilMaps, ForwardModel, SamplingPattern
from .pnp import PnPConfig, bfista, pnp_admm, pnp_fista, pnp_pds
from .red import RedConfig, red_apg, red_gd

__version__ = "0.1.0"
