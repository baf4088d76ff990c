"""Learned leapfrog operator, its inverse, log-Jacobian and MH acceptance.

States are batched: ``x`` and ``v`` are (N, n) and ``d`` is an (N,) array of
+1/-1.  A single 1-d state is accepted everywhere and returned unbatched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .energy import DivergenceError, EnergyModel
from .netfn import NetParams, encode_time, forward


@dataclass
class AugmentedState:
    x: np.ndarray
    v: np.ndarray
    d: np.ndarray | int = 1

    def __post_init__(self):
        if np.shape(ad.value(self.x)) != np.shape(ad.value(self.v)):
            raise ValueError("x and v must have the same shape")
        if not np.all(np.abs(np.asarray(self.d)) == 1):
            raise ValueError("direction must be +1 or -1")

    @property
    def batched(self) -> bool:
        return np.ndim(ad.value(self.x)) == 2


@dataclass
class IntegratorConfig:
    eps: float
    M: int

    def __post_init__(self):
        if not ad.value(self.eps) > 0:
            raise ValueError(f"step size must be > 0, got {ad.value(self.eps)}")
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")


@dataclass
class ProposalResult:
    state_out: AugmentedState
    log_jacobian: np.ndarray | float
    finite: np.ndarray | bool = True
    trace: list = field(default_factory=list)


def make_masks(n: int, M: int, seed: int) -> np.ndarray:
    """M binary masks with floor(n/2) ones each, as an (M, n) float array."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    masks = np.zeros((M, n))
    for t in range(M):
        masks[t, rng.choice(n, size=n // 2, replace=False)] = 1.0
    return masks


def flip(state: AugmentedState) -> AugmentedState:
    return AugmentedState(state.x, state.v, -np.asarray(state.d) if np.ndim(state.d) else -state.d)


def _check(name: str, arr, strict: bool, bad: np.ndarray) -> np.ndarray:
    rows = ~np.all(np.isfinite(ad.value(arr)), axis=-1)
    if strict and rows.any():
        raise DivergenceError(f"non-finite values after the {name} sub-update")
    return bad | rows


def _v_inputs(energy, x):
    return ad.energy_grad(energy, x)


def _fwd(x, v, t, params, masks, energy, eps, strict, trace):
    m = masks[t - 1]
    mb = 1.0 - m
    tau = encode_time(t, params.M)
    half = 0.5 * eps
    bad = np.zeros(ad.value(x).shape[0], dtype=bool)

    g = _v_inputs(energy, x)
    sv1, qv1, tv1 = forward(params, "v_stack", x, g, tau)
    v1 = v * ad.exp(half * sv1) - half * (g * ad.exp(eps * qv1) + tv1)
    bad = _check("first momentum", v1, strict, bad)

    sx2, qx2, tx2 = forward(params, "x_stack", x * mb, v1, tau)
    x1 = x * mb + m * (x * ad.exp(eps * sx2) + eps * (v1 * ad.exp(eps * qx2) + tx2))
    bad = _check("first position", x1, strict, bad)

    sx3, qx3, tx3 = forward(params, "x_stack", x1 * m, v1, tau)
    x2 = x1 * m + mb * (x1 * ad.exp(eps * sx3) + eps * (v1 * ad.exp(eps * qx3) + tx3))
    bad = _check("second position", x2, strict, bad)

    g2 = _v_inputs(energy, x2)
    sv4, qv4, tv4 = forward(params, "v_stack", x2, g2, tau)
    v2 = v1 * ad.exp(half * sv4) - half * (g2 * ad.exp(eps * qv4) + tv4)
    bad = _check("second momentum", v2, strict, bad)

    logdet = (half * ad.sum(sv1, axis=-1) + eps * ad.sum(m * sx2, axis=-1)
              + eps * ad.sum(mb * sx3, axis=-1) + half * ad.sum(sv4, axis=-1))
    if trace is not None:
        trace.append({"t": t, "v1": ad.value(v1), "x1": ad.value(x1),
                      "x2": ad.value(x2), "v2": ad.value(v2)})
    return x2, v2, logdet, bad


def _rev(x2, v2, t, params, masks, energy, eps, strict, trace):
    m = masks[t - 1]
    mb = 1.0 - m
    tau = encode_time(t, params.M)
    half = 0.5 * eps
    bad = np.zeros(ad.value(x2).shape[0], dtype=bool)

    g2 = _v_inputs(energy, x2)
    sv4, qv4, tv4 = forward(params, "v_stack", x2, g2, tau)
    v1 = (v2 + half * (g2 * ad.exp(eps * qv4) + tv4)) * ad.exp(-half * sv4)
    bad = _check("second momentum (inverse)", v1, strict, bad)

    sx3, qx3, tx3 = forward(params, "x_stack", x2 * m, v1, tau)
    x1 = x2 * m + mb * ((x2 - eps * (v1 * ad.exp(eps * qx3) + tx3)) * ad.exp(-eps * sx3))
    bad = _check("second position (inverse)", x1, strict, bad)

    sx2, qx2, tx2 = forward(params, "x_stack", x1 * mb, v1, tau)
    x = x1 * mb + m * ((x1 - eps * (v1 * ad.exp(eps * qx2) + tx2)) * ad.exp(-eps * sx2))
    bad = _check("first position (inverse)", x, strict, bad)

    g = _v_inputs(energy, x)
    sv1, qv1, tv1 = forward(params, "v_stack", x, g, tau)
    v = (v1 + half * (g * ad.exp(eps * qv1) + tv1)) * ad.exp(-half * sv1)
    bad = _check("first momentum (inverse)", v, strict, bad)

    logdet = -(half * ad.sum(sv1, axis=-1) + eps * ad.sum(m * sx2, axis=-1)
               + eps * ad.sum(mb * sx3, axis=-1) + half * ad.sum(sv4, axis=-1))
    if trace is not None:
        trace.append({"t": t, "v1": ad.value(v1), "x1": ad.value(x1),
                      "x": ad.value(x), "v": ad.value(v)})
    return x, v, logdet, bad


def _as_batch(state: AugmentedState):
    x, v = state.x, state.v
    single = not state.batched
    if single:
        x = np.asarray(x, dtype=float)[None, :]
        v = np.asarray(v, dtype=float)[None, :]
    n_rows = np.shape(ad.value(x))[0]
    d = np.broadcast_to(np.asarray(state.d, dtype=int), (n_rows,))
    return x, v, d, single


def _wrap(x, v, d, logdet, bad, single, trace):
    if single:
        x, v = ad.value(x)[0], ad.value(v)[0]
        return ProposalResult(AugmentedState(x, v, int(d[0])), float(ad.value(logdet)[0]),
                              not bool(bad[0]), trace)
    return ProposalResult(AugmentedState(x, v, d.copy()), logdet, ~bad, trace)


def _step(state, t, params, masks, energy, cfg, direction, strict, keep_trace):
    x, v, d, single = _as_batch(state)
    if not np.all(d == direction):
        raise ValueError(f"this step requires d = {direction:+d}")
    if not 1 <= t <= params.M:
        raise ValueError(f"step index t={t} outside 1..{params.M}")
    trace = [] if keep_trace else None
    step = _fwd if direction == 1 else _rev
    with np.errstate(over="ignore", invalid="ignore"):
        x, v, logdet, bad = step(x, v, t, params, masks, energy, cfg.eps, strict, trace)
    return _wrap(x, v, d, logdet, bad, single, trace or [])


def forward_step(state, t, params, masks, energy, cfg, strict=True, keep_trace=False):
    """One forward augmented leapfrog step for d = +1."""
    return _step(state, t, params, masks, energy, cfg, 1, strict, keep_trace)


def reverse_step(state, t, params, masks, energy, cfg, strict=True, keep_trace=False):
    """Exact inverse of :func:`forward_step` for d = -1."""
    return _step(state, t, params, masks, energy, cfg, -1, strict, keep_trace)


def _is_plain(params, x, v, eps) -> bool:
    return (not any(isinstance(a, ad.Var) for a in (x, v, eps))
            and params.v_stack.heads_are_zero() and params.x_stack.heads_are_zero())


def _run_plain(x, v, direction, M, energy, eps, strict):
    """Textbook leapfrog; bit-identical to the masked update with zero heads."""
    half = 0.5 * eps
    g = energy.grad(x)
    for _ in range(M):
        if direction == 1:
            v = v - half * g
            x = x + eps * v
            g = energy.grad(x)
            v = v - half * g
        else:
            v = v + half * g
            x = x - eps * v
            g = energy.grad(x)
            v = v + half * g
    bad = ~(np.all(np.isfinite(x), axis=-1) & np.all(np.isfinite(v), axis=-1))
    if strict and bad.any():
        raise DivergenceError("non-finite values in the leapfrog trajectory")
    return x, v, np.zeros(len(x)), bad


def _run(x, v, direction, params, masks, energy, eps, strict):
    if _is_plain(params, x, v, eps):
        return _run_plain(x, v, direction, params.M, energy, eps, strict)
    bad = np.zeros(np.shape(ad.value(x))[0], dtype=bool)
    logdet = 0.0
    steps = range(1, params.M + 1) if direction == 1 else range(params.M, 0, -1)
    step = _fwd if direction == 1 else _rev
    for t in steps:
        x, v, ld, b = step(x, v, t, params, masks, energy, eps, strict, None)
        logdet = logdet + ld
        bad |= b
    return x, v, logdet, bad


def apply_operator(state: AugmentedState, params: NetParams, masks: np.ndarray,
                   energy: EnergyModel, cfg: IntegratorConfig, strict: bool = False) -> ProposalResult:
    """Run M steps forward (d=+1) or in reverse order (d=-1); d is unchanged.

    Rows going non-finite are reported in ``finite`` unless ``strict``.
    """
    x, v, d, single = _as_batch(state)
    n_rows = d.shape[0]
    groups = [(1, np.flatnonzero(d == 1)), (-1, np.flatnonzero(d == -1))]
    groups = [(s, idx) for s, idx in groups if idx.size]
    with np.errstate(over="ignore", invalid="ignore"):
        if len(groups) == 1:
            x, v, logdet, bad = _run(x, v, groups[0][0], params, masks, energy, cfg.eps, strict)
        else:
            parts = [_run(ad.take_rows(x, idx), ad.take_rows(v, idx), s, params, masks,
                          energy, cfg.eps, strict) for s, idx in groups]
            index_sets = [idx for _, idx in groups]
            x = ad.merge_rows([p[0] for p in parts], index_sets, n_rows)
            v = ad.merge_rows([p[1] for p in parts], index_sets, n_rows)
            logdet = ad.merge_rows([p[2] for p in parts], index_sets, n_rows)
            bad = np.zeros(n_rows, dtype=bool)
            for p, idx in zip(parts, index_sets):
                bad[idx] = p[3]
    return _wrap(x, v, d, logdet, bad, single, [])


def propose(state, params, masks, energy, cfg, strict=False) -> ProposalResult:
    """F L_theta: apply the operator then flip the direction."""
    res = apply_operator(state, params, masks, energy, cfg, strict=strict)
    res.state_out = flip(res.state_out)
    return res


def log_accept_ratio(state_in: AugmentedState, proposal: ProposalResult, energy: EnergyModel):
    """Joint log-density difference plus log-Jacobian (tape-aware, batched or not)."""
    out = proposal.state_out
    x0, v0 = ad.value(state_in.x), ad.value(state_in.v)
    with np.errstate(over="ignore", invalid="ignore"):
        lp_in = -energy.energy(x0) - 0.5 * np.sum(v0 * v0, axis=-1)
        lp_out = (-ad.energy_value(energy, out.x)
                  - 0.5 * ad.sum(ad.square(out.v), axis=-1))
        return lp_out - lp_in + proposal.log_jacobian


def accept_prob(state_in: AugmentedState, proposal: ProposalResult, energy: EnergyModel):
    """min(1, exp(log ratio)); non-finite ratios give 0.

    Returns ``(A, divergent)``, scalars for a single state, arrays for a batch.
    """
    logr = np.asarray(ad.value(log_accept_ratio(state_in, proposal, energy)), dtype=float)
    divergent = ~np.isfinite(logr) | ~np.asarray(proposal.finite)
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.where(divergent, 0.0, np.exp(np.minimum(np.where(divergent, 0.0, logr), 0.0)))
    if a.ndim == 0:
        return float(a), bool(divergent)
    return a, divergent


def accept_prob_taped(state_in, proposal, energy):
    """Differentiable acceptance: exp(min(log ratio, 0)), clamp subgradient 0."""
    return ad.exp(ad.minimum(log_accept_ratio(state_in, proposal, energy), 0.0))
