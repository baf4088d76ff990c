"""Markov transitions (resample, then accept/reject F L_theta) and chain runs.

Random-number consumption per chain and transition is fixed: ``n`` standard
normals for the momentum, one uniform for the direction, one uniform for the
Metropolis-Hastings test.  Each chain owns one stream spawned from the seed,
so results do not depend on how chains are split across workers.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import EnergyModel
from .integrator import AugmentedState, IntegratorConfig, accept_prob, propose
from .netfn import NetParams


@dataclass
class ChainTrace:
    positions: np.ndarray  # (steps, n), state after each MH step
    accepts: np.ndarray
    accept_probs: np.ndarray
    sq_jumps: np.ndarray  # squared distance of the proposal, accepted or not
    momenta: np.ndarray | None = None
    directions: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class RngStream:
    generator: np.random.Generator
    draws: int = field(default=0, repr=False)

    @classmethod
    def from_seed(cls, seed) -> RngStream:
        return cls(np.random.default_rng(seed))

    def aux(self, n: int) -> tuple[np.ndarray, int]:
        v = self.generator.standard_normal(n)
        d = 1 if self.generator.random() < 0.5 else -1
        self.draws += n + 1
        return v, d

    def uniform(self) -> float:
        self.draws += 1
        return self.generator.random()


def chain_streams(seed: int, n_chains: int) -> list[RngStream]:
    return [RngStream(np.random.default_rng(s))
            for s in np.random.SeedSequence(seed).spawn(n_chains)]


def resample_aux(state: AugmentedState, rng: RngStream) -> AugmentedState:
    """Fresh momentum ~ N(0, I) and uniform direction; position untouched."""
    v, d = rng.aux(np.shape(state.x)[-1])
    return AugmentedState(state.x, v, d)


def _mh(state, res, energy, u):
    """Accept/reject a batched proposal given one uniform per row."""
    a, divergent = accept_prob(state, res, energy)
    x_new = res.state_out.x
    delta = np.where(divergent, 0.0, np.sum((np.nan_to_num(x_new) - state.x) ** 2, axis=-1))
    accepted = (u < a) & ~divergent
    keep = accepted[:, None]
    nxt = AugmentedState(np.where(keep, x_new, state.x), np.where(keep, res.state_out.v, state.v),
                         np.where(accepted, res.state_out.d, state.d))
    return nxt, accepted, a, delta


def transition(state: AugmentedState, params: NetParams, masks: np.ndarray, energy: EnergyModel,
               cfg: IntegratorConfig, rng: RngStream):
    """Propose F L_theta(state) and accept with the MH probability.

    Returns ``(next_state, accepted, A, delta)``; a rejected move returns the
    input state object itself.
    """
    res = propose(state, params, masks, energy, cfg)
    a, divergent = accept_prob(state, res, energy)
    u = rng.uniform()
    if divergent:
        return state, False, 0.0, 0.0
    delta = float(np.sum((res.state_out.x - state.x) ** 2))
    if u < a:
        return res.state_out, True, a, delta
    return state, False, a, delta


def _run_block(x0, streams, n_steps, params, masks, energy, cfg, keep_full):
    k, n = x0.shape
    x = np.array(x0, dtype=float)
    pos = np.empty((n_steps, k, n))
    acc = np.empty((n_steps, k), dtype=bool)
    probs = np.empty((n_steps, k))
    jumps = np.empty((n_steps, k))
    mom = np.empty((n_steps, k, n)) if keep_full else None
    dirs = np.empty((n_steps, k), dtype=int) if keep_full else None
    v = np.empty((k, n))
    d = np.empty(k, dtype=int)
    u = np.empty(k)
    for step in range(n_steps):
        for i, s in enumerate(streams):
            v[i], d[i] = s.aux(n)
            u[i] = s.uniform()
        state = AugmentedState(x, v.copy(), d.copy())
        res = propose(state, params, masks, energy, cfg)
        nxt, accepted, a, delta = _mh(state, res, energy, u)
        x = nxt.x
        pos[step], acc[step], probs[step], jumps[step] = x, accepted, a, delta
        if keep_full:
            mom[step], dirs[step] = nxt.v, nxt.d
    traces = []
    for i in range(k):
        traces.append(ChainTrace(pos[:, i].copy(), acc[:, i].copy(), probs[:, i].copy(),
                                 jumps[:, i].copy(),
                                 None if mom is None else mom[:, i].copy(),
                                 None if dirs is None else dirs[:, i].copy()))
    return traces


def default_workers() -> int:
    env = os.environ.get("L2MC_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_chains(init_positions, n_steps: int, params: NetParams, masks: np.ndarray,
               energy: EnergyModel, cfg: IntegratorConfig, seed: int,
               workers: int | None = None, keep_full: bool = False) -> list[ChainTrace]:
    """Run independent chains in lockstep; one trace per initial position."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x0 = np.atleast_2d(np.asarray(init_positions, dtype=float))
    if x0.shape[1] != energy.dim:
        raise ValueError(f"initial positions have dim {x0.shape[1]}, energy has {energy.dim}")
    streams = chain_streams(seed, len(x0))
    workers = min(workers or default_workers(), len(x0))
    if workers <= 1:
        return _run_block(x0, streams, n_steps, params, masks, energy, cfg, keep_full)
    chunks = np.array_split(np.arange(len(x0)), workers)
    with ThreadPoolExecutor(workers) as pool:
        futures = [pool.submit(_run_block, x0[idx], [streams[i] for i in idx], n_steps,
                               params, masks, energy, cfg, keep_full) for idx in chunks]
        return [t for f in futures for t in f.result()]


def write_trace_csv(path: str | Path, trace: ChainTrace) -> None:
    n = trace.positions.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "accepted", "accept_prob", "sq_jump"] + [f"x_{i}" for i in range(n)])
        for k in range(len(trace)):
            w.writerow([k, int(trace.accepts[k]), f"{trace.accept_probs[k]:.17g}",
                        f"{trace.sq_jumps[k]:.17g}"]
                       + [f"{c:.17g}" for c in trace.positions[k]])


def read_trace_csv(path: str | Path) -> ChainTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ChainTrace(data[:, 4:], data[:, 1].astype(bool), data[:, 2], data[:, 3])
