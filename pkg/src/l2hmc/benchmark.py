"""Tuned-HMC versus trained-sampler comparison at an equal gradient budget."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import mode_occupancy, multi_chain_ess
from .energy import EnergyModel, Kind, build_energy
from .integrator import IntegratorConfig
from .sampler import run_chains
from .training import ConfigError, TrainConfig, TrainResult, paper_defaults, train, tune_hmc

log = logging.getLogger(__name__)

# Reference results: (ESS L2HMC, ESS HMC, ratio) per MH step
REFERENCE_ROWS = {
    "icg": (7.83e-1, 1.65e-2, 36.6),
    "rough_well": (6.25e-1, 1.16e-1, 5.4),
    "scg": (4.97e-1, 4.69e-3, 106.2),
    "mog": (3.24e-2, 2.61e-4, 124.0),
}


@dataclass
class EvalConfig:
    n_chains: int = 20
    n_steps: int = 5000
    burn_in: int = 500


@dataclass
class HmcTuneConfig:
    eps_grid: list[float] = field(default_factory=lambda: np.logspace(-2, 0, 13).tolist())
    steps_per_candidate: int = 1000
    n_chains: int = 20


@dataclass
class BenchmarkConfig:
    energy: dict
    train: dict = field(default_factory=dict)
    hmc: HmcTuneConfig = field(default_factory=HmcTuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, blob: dict) -> BenchmarkConfig:
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(blob) - allowed
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown benchmark option")
        if "energy" not in blob:
            raise ConfigError("energy", "missing")
        hmc = _sub(HmcTuneConfig, blob.get("hmc", {}), "hmc")
        ev = _sub(EvalConfig, blob.get("eval", {}), "eval")
        return cls(blob["energy"], dict(blob.get("train", {})), hmc, ev, int(blob.get("seed", 0)))


def _sub(cls, blob, prefix):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(blob) - names
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown option")
    return cls(**blob)


def evaluation_start(energy: EnergyModel, n_chains: int, seed: int) -> np.ndarray:
    return energy.sample(np.random.default_rng(np.random.SeedSequence([seed, 7])), n_chains)


def evaluate(energy: EnergyModel, params, masks, eps: float, ev: EvalConfig, seed: int,
             x0: np.ndarray | None = None):
    """Run chains from target draws and return (traces after burn-in, ESS summary)."""
    if x0 is None:
        x0 = evaluation_start(energy, ev.n_chains, seed)
    traces = run_chains(x0, ev.burn_in + ev.n_steps, params, masks, energy,
                        IntegratorConfig(eps, params.M), seed)
    kept = [t.positions[ev.burn_in:] for t in traces]
    summary = multi_chain_ess(kept, energy.mean(), energy.covariance())
    acceptance = float(np.mean([t.accept_probs[ev.burn_in:].mean() for t in traces]))
    return kept, summary, acceptance


@dataclass
class BenchmarkResult:
    row: dict
    tune_table: list[dict]
    train_result: TrainResult
    l2hmc_positions: list
    hmc_positions: list
    details: dict


def run_benchmark(cfg: BenchmarkConfig) -> BenchmarkResult:
    energy = build_energy(cfg.energy)
    kind = energy.kind
    train_cfg = paper_defaults(kind, seed=cfg.seed, **{k: v for k, v in cfg.train.items()
                                                       if k != "seed"})
    M = train_cfg.M
    tuned = tune_hmc(energy, M, cfg.hmc.eps_grid, cfg.hmc.steps_per_candidate,
                     cfg.hmc.n_chains, seed=cfg.seed)
    log.info("tuned HMC step size %.4g", tuned.best_eps)
    if "eps" not in cfg.train:
        train_cfg = dataclasses.replace(train_cfg, eps=tuned.best_eps)
    result = train(train_cfg, energy)

    x0 = evaluation_start(energy, cfg.eval.n_chains, cfg.seed)
    l2_pos, l2_ess, l2_acc = evaluate(energy, result.params, result.masks, result.eps,
                                      cfg.eval, cfg.seed, x0)
    hmc_params = result.params.with_zero_heads()
    hmc_pos, hmc_ess, hmc_acc = evaluate(energy, hmc_params, result.masks, tuned.best_eps,
                                         cfg.eval, cfg.seed, x0)
    ratio = l2_ess.pooled / hmc_ess.pooled if hmc_ess.pooled > 0 else float("inf")
    row = {"distribution": _label(energy), "ess_l2hmc": l2_ess.pooled,
           "ess_hmc": hmc_ess.pooled, "ratio": ratio}
    details = {
        "l2hmc": {"eps": result.eps, "acceptance": l2_acc, **dataclasses.asdict(l2_ess)},
        "hmc": {"eps": tuned.best_eps, "acceptance": hmc_acc, **dataclasses.asdict(hmc_ess)},
        "gradient_evals_per_chain": 2 * M * (cfg.eval.burn_in + cfg.eval.n_steps),
        "reference": dict(zip(("ess_l2hmc", "ess_hmc", "ratio"), REFERENCE_ROWS[kind.value]))
        if kind.value in REFERENCE_ROWS else None,
    }
    if kind is Kind.MOG:
        details["l2hmc"]["mode_occupancy"] = mode_occupancy(np.concatenate(l2_pos),
                                                            energy.centroids).tolist()
        details["hmc"]["mode_occupancy"] = mode_occupancy(np.concatenate(hmc_pos),
                                                          energy.centroids).tolist()
    return BenchmarkResult(row, tuned.table, result, l2_pos, hmc_pos, details)


def _label(energy: EnergyModel) -> str:
    names = {Kind.ICG: f"{energy.dim}-d ICG", Kind.SCG: "2-d SCG", Kind.MOG: "MoG",
             Kind.ROUGH_WELL: "Rough Well", Kind.STD_GAUSSIAN: f"{energy.dim}-d Gaussian"}
    return names[energy.kind]
