"""Learned, generalized HMC samplers trained to maximize expected squared jump."""

from .energy import EnergyModel, build_energy
from .integrator import AugmentedState, IntegratorConfig, apply_operator, make_masks, propose
from .netfn import NetParams, init_params
from .sampler import run_chains
from .training import TrainConfig, train, tune_hmc

__all__ = [
    "AugmentedState", "EnergyModel", "IntegratorConfig", "NetParams", "TrainConfig",
    "apply_operator", "build_energy", "init_params", "make_masks", "propose", "run_chains",
    "train", "tune_hmc",
]
