"""Training loop: reciprocal ESJD loss, Adam, annealing and HMC step-size tuning."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .diagnostics import coordinate_ess
from .energy import EnergyModel, Kind
from .integrator import (AugmentedState, IntegratorConfig, accept_prob, accept_prob_taped,
                         make_masks, propose)
from .netfn import NetParams, grad_params, init_params
from .sampler import run_chains

log = logging.getLogger(__name__)

DELTA_A_FLOOR = 1e-6


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    n_iters: int = 5000
    batch_size: int = 200
    M: int = 10
    eps: float | None = 0.1
    train_eps: bool = True
    lam: float = 0.1
    lam_b: float = 0.0
    lr: float = 1e-3
    lr_decay: float = 1.0  # multiplicative, applied every lr_decay_steps
    lr_decay_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 50.0
    n_hidden: int = 10
    seed: int = 0
    anneal: bool = False
    T0: float = 5.0
    init_scale: float = 1.0
    init_offset: float = 0.0
    floor: float = DELTA_A_FLOOR

    def __post_init__(self):
        positive_ints = ("n_iters", "batch_size", "M", "n_hidden", "lr_decay_steps")
        for name in positive_ints:
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, np.integer)) or val < 1:
                raise ConfigError(name, f"must be a positive integer, got {val!r}")
        checks = [("lam", self.lam > 0, "lambda (loss scale) must be > 0"),
                  ("lam_b", self.lam_b >= 0, "lambda_b (burn-in weight) must be >= 0"),
                  ("lr", self.lr > 0, "must be > 0"),
                  ("lr_decay", 0 < self.lr_decay <= 1, "must be in (0, 1]"),
                  ("beta1", 0 <= self.beta1 < 1, "must be in [0, 1)"),
                  ("beta2", 0 <= self.beta2 < 1, "must be in [0, 1)"),
                  ("adam_eps", self.adam_eps > 0, "must be > 0"),
                  ("clip_norm", self.clip_norm > 0, "must be > 0"),
                  ("T0", self.T0 >= 1, "must be >= 1 (annealing ends at T = 1)"),
                  ("init_scale", self.init_scale > 0, "must be > 0"),
                  ("floor", self.floor > 0, "must be > 0")]
        if self.eps is not None:
            checks.append(("eps", self.eps > 0, "must be > 0"))
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, f"{msg}, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, blob: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(blob) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown training option")
        return cls(**blob)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def paper_defaults(kind: Kind | str, **overrides) -> TrainConfig:
    """Experiment hyperparameters for the four analytic tasks."""
    kind = Kind(kind)
    base = dict(n_iters=5000, batch_size=200, M=10, lr=1e-3, n_hidden=10,
                lam_b=1.0 if kind in (Kind.MOG, Kind.ROUGH_WELL) else 0.0,
                anneal=kind is Kind.MOG)
    base.update(overrides)
    return TrainConfig(**base)


# -- loss ----------------------------------------------------------------------

def loss_term(delta_a, lam: float, floor: float | None = DELTA_A_FLOOR):
    """lam^2 / (delta A) - (delta A) / lam^2, elementwise and tape-aware.

    With ``floor=None`` a non-positive ``delta_a`` raises instead of being floored.
    """
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    if floor is None:
        if np.any(ad.value(delta_a) <= 0):
            raise ValueError("delta * A must be > 0 without a floor")
        f = delta_a
    else:
        f = ad.maximum(delta_a, floor)
    lam2 = lam * lam
    return lam2 * ad.reciprocal(f) - f * (1.0 / lam2)


@dataclass
class ObjectiveResult:
    loss: object  # scalar Var when parameters are taped, else float
    proposal_p: AugmentedState
    accept_p: np.ndarray
    delta_p: np.ndarray
    divergent_p: np.ndarray
    esjd_p: float


def _term(state, params, masks, energy, cfg, lam, floor):
    """Summed per-row loss over a batch, with divergent rows held at the floor value."""
    res = propose(state, params, masks, energy, cfg)
    a_np, divergent = accept_prob(state, res, energy)
    x_out = ad.value(res.state_out.x)
    n_rows = len(a_np)
    const = float(loss_term(np.array(floor), lam, floor))
    ok = np.flatnonzero(~divergent)
    if ok.size < n_rows:
        # rerun the finite rows so NaNs never reach the backward pass
        sub = AugmentedState(state.x[ok], state.v[ok], np.asarray(state.d)[ok])
        res_ok = propose(sub, params, masks, energy, cfg)
    else:
        sub, res_ok = state, res
    total = const * (n_rows - ok.size)
    if ok.size:
        a = accept_prob_taped(sub, res_ok, energy)
        delta = ad.sum(ad.square(res_ok.state_out.x - sub.x), axis=-1)
        total = ad.sum(loss_term(delta * a, lam, floor)) + total
    delta_np = np.where(divergent, 0.0, np.sum((np.nan_to_num(x_out) - state.x) ** 2, axis=-1))
    return total, res, a_np, delta_np, divergent


def batch_objective(p_batch: AugmentedState, q_batch: AugmentedState | None, params: NetParams,
                    masks: np.ndarray, energy: EnergyModel, cfg: IntegratorConfig,
                    lam: float, lam_b: float, floor: float = DELTA_A_FLOOR) -> ObjectiveResult:
    """Mean loss over the persistent batch plus lam_b times the mean over fresh draws.

    Recorded on a tape whenever ``params`` (or ``cfg.eps``) are tape variables.
    """
    if len(p_batch.x) == 0:
        raise ValueError("empty persistent batch")
    total_p, res, a_np, delta_np, divergent = _term(p_batch, params, masks, energy, cfg, lam, floor)
    loss = total_p * (1.0 / len(p_batch.x))
    if lam_b > 0 and q_batch is not None:
        if len(q_batch.x) == 0:
            raise ValueError("empty initialization batch")
        total_q = _term(q_batch, params, masks, energy, cfg, lam, floor)[0]
        loss = loss + total_q * (lam_b / len(q_batch.x))
    return ObjectiveResult(loss, res.state_out, a_np, delta_np, divergent,
                           float(np.mean(delta_np * a_np)))


# -- optimizer -------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, size: int) -> OptimizerState:
        return cls(np.zeros(size), np.zeros(size))


def adam_step(theta: np.ndarray, grads: np.ndarray, opt: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update; non-finite gradients skip the step."""
    if theta.shape != grads.shape or opt.m.shape != theta.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        log.warning("non-finite gradient at step %d, update skipped", opt.step)
        return theta, dataclasses.replace(opt, skipped=opt.skipped + 1)
    step = opt.step + 1
    m = beta1 * opt.m + (1 - beta1) * grads
    v = beta2 * opt.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, OptimizerState(m, v, step, opt.skipped)


def clip_by_global_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(grads * grads)))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


# -- annealing ---------------------------------------------------------------------

def anneal_temperature(iteration: int, n_iters: int, T0: float = 5.0) -> float:
    """Geometric schedule from T0 at the first iteration to 1 at the last."""
    if not 0 <= iteration < n_iters:
        raise ValueError(f"iteration {iteration} outside [0, {n_iters})")
    if n_iters == 1:
        return 1.0
    return float(T0 * (1.0 / T0) ** (iteration / (n_iters - 1)))


# -- training loop -----------------------------------------------------------------

@dataclass
class TrainReport:
    loss: list[float] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)
    esjd: list[float] = field(default_factory=list)
    temperature: list[float] = field(default_factory=list)
    eps: list[float] = field(default_factory=list)
    skipped_updates: int = 0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    params: NetParams
    masks: np.ndarray
    eps: float
    report: TrainReport


def _draw_q(rng, n_rows, n, cfg: TrainConfig) -> AugmentedState:
    x = cfg.init_offset + cfg.init_scale * rng.standard_normal((n_rows, n))
    return _resample(rng, x)


def _resample(rng, x) -> AugmentedState:
    v = rng.standard_normal(x.shape)
    d = np.where(rng.random(len(x)) < 0.5, 1, -1)
    return AugmentedState(x, v, d)


def train(cfg: TrainConfig, energy: EnergyModel, callback=None) -> TrainResult:
    """Fit the sampler parameters by minimizing the batch objective with Adam."""
    n = energy.dim
    eps0 = cfg.eps if cfg.eps is not None else tune_hmc(energy, cfg.M, seed=cfg.seed).best_eps
    params = init_params(n, cfg.n_hidden, cfg.M, cfg.seed)
    masks = make_masks(n, cfg.M, cfg.seed + 1)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    theta = params.to_flat()
    if cfg.train_eps:
        theta = np.append(theta, np.log(eps0))
    opt = OptimizerState.zeros(theta.size)
    report = TrainReport()
    p_x = _draw_q(rng, cfg.batch_size, n, cfg).x
    for it in range(cfg.n_iters):
        temp = anneal_temperature(it, cfg.n_iters, cfg.T0) if cfg.anneal else 1.0
        energy_t = energy.at_temperature(temp) if temp != energy.temperature else energy
        q_batch = _draw_q(rng, cfg.batch_size, n, cfg) if cfg.lam_b > 0 else None
        p_batch = _resample(rng, p_x)

        tape = ad.Tape()
        taped = params.on_tape(tape)
        if cfg.train_eps:
            log_eps = tape.leaf(theta[-1])
            eps_var = ad.exp(log_eps)
        else:
            eps_var = eps0
        icfg = IntegratorConfig(eps_var, cfg.M)
        obj = batch_objective(p_batch, q_batch, taped, masks, energy_t, icfg,
                              cfg.lam, cfg.lam_b, cfg.floor)
        frac_div = float(np.mean(obj.divergent_p))
        if frac_div > 0.9:
            raise TrainingDivergence(f"{frac_div:.0%} of proposals diverged at iteration {it}")

        grads = grad_params(obj.loss, taped)
        if cfg.train_eps:
            grads = np.append(grads, ad.grad_of(obj.loss, [log_eps])[0])
        grads = clip_by_global_norm(grads, cfg.clip_norm) if np.all(np.isfinite(grads)) else grads
        lr = cfg.lr * cfg.lr_decay ** (it // cfg.lr_decay_steps)

        u = rng.random(cfg.batch_size)
        accepted = (u < obj.accept_p) & ~obj.divergent_p
        p_x = np.where(accepted[:, None], ad.value(obj.proposal_p.x), p_x)

        theta, opt = adam_step(theta, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        params = params.from_flat(theta[:params.size])
        loss_val = float(ad.value(obj.loss))
        report.loss.append(loss_val)
        report.acceptance.append(float(np.mean(obj.accept_p)))
        report.esjd.append(obj.esjd_p)
        report.temperature.append(temp)
        report.eps.append(float(np.exp(theta[-1])) if cfg.train_eps else float(eps0))
        if callback is not None:
            callback(it, report)
        if it % 500 == 0 or it == cfg.n_iters - 1:
            log.info("iter %d loss %.4g acc %.3f esjd %.4g eps %.4g T %.3g", it, loss_val,
                     report.acceptance[-1], obj.esjd_p, report.eps[-1], temp)
    report.skipped_updates = opt.skipped
    eps_final = float(np.exp(theta[-1])) if cfg.train_eps else float(eps0)
    return TrainResult(params, masks, eps_final, report)


# -- HMC baseline tuning --------------------------------------------------------------

@dataclass
class TuneResult:
    best_eps: float
    table: list[dict]


def default_eps_grid(num: int = 13) -> np.ndarray:
    return np.logspace(-2, 0, num)


def tune_hmc(energy: EnergyModel, M: int, eps_grid=None, steps_per_candidate: int = 1000,
             n_chains: int = 20, seed: int = 0, burn_in: int | None = None) -> TuneResult:
    """Grid search for the plain-HMC step size maximizing the worst-coordinate ESS.

    Chains start from target draws, are burned in, and ESS uses the true moments.
    Ties go to the larger step size.
    """
    grid = default_eps_grid() if eps_grid is None else np.atleast_1d(np.asarray(eps_grid, float))
    if grid.size == 0:
        raise ValueError("empty step-size grid")
    burn_in = steps_per_candidate // 5 if burn_in is None else burn_in
    params = init_params(energy.dim, 1, M, seed).with_zero_heads()
    masks = make_masks(energy.dim, M, seed)
    mu, cov = energy.mean(), energy.covariance()
    x0 = energy.sample(np.random.default_rng(seed), n_chains)
    table = []
    for eps in grid:
        traces = run_chains(x0, burn_in + steps_per_candidate, params, masks, energy,
                            IntegratorConfig(float(eps), M), seed)
        acc = float(np.mean([t.accept_probs[burn_in:].mean() for t in traces]))
        if acc == 0.0:
            score = float("nan")
        else:
            score = float(coordinate_ess([t.positions[burn_in:] for t in traces], mu, cov).min())
        table.append({"eps": float(eps), "ess_min": score, "acceptance": acc})
    scores = np.array([row["ess_min"] for row in table])
    if np.all(np.isnan(scores)):
        raise FloatingPointError("every step size in the grid diverged")
    best = np.nanmax(scores)
    best_eps = max(row["eps"] for row in table if row["ess_min"] == best)
    return TuneResult(best_eps, table)
