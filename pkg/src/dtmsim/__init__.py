"""Simulator and training toolkit for denoising chains of sparse-grid
Boltzmann machines, with mixing diagnostics and a physical energy model of
the proposed sampling hardware."""

from .grid import (
    ConnectivityPattern,
    GridGraph,
    build_grid,
    build_pattern,
    color_blocks,
)
from .boltzmann import BoltzmannMachine, SpinState, energy, flip_probability, local_field
from .gibbs import ChainBatch, GibbsEngine, SamplerConfig, estimate_moments, run
from .forward import NoiseSchedule, coupling_for_step, flip_kernel, gamma, noise_dataset
from .dtm import AcpState, DtmModel, TrainConfig, acp_update, generate, grad_step, tc_grad, train
from .diagnostics import (
    AutocorrResult,
    ProjectionObservable,
    autocorrelation,
    fit_sigma2,
    proxy_frechet,
)
from .hardware import EnergyLedger, ProcessParams, gpu_baseline, program_energy

__version__ = "0.1.0"
