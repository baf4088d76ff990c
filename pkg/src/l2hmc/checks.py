"""Property checks for the learned operator, each reporting its worst error.

Every check returns a :class:`PropertyResult`; nothing here raises on a
failed property.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .energy import EnergyModel, build_energy
from .integrator import (AugmentedState, IntegratorConfig, accept_prob, apply_operator,
                         forward_step, make_masks, propose)
from .netfn import NetParams, grad_params, init_params, randomize_heads
from .training import DELTA_A_FLOOR, batch_objective, loss_term


@dataclass
class PropertyResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max error {self.max_error:.3e} (tol {self.tolerance:.0e}) {self.detail}"


def _result(name, err, tol, detail=""):
    err = float(err)
    return PropertyResult(name, err, tol, bool(np.isfinite(err) and err <= tol), detail)


def textbook_leapfrog(x, v, grad, eps: float, M: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Plain leapfrog, coded independently of the learned operator."""
    out = []
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    for _ in range(M):
        v_half = v - eps / 2 * grad(x)
        x = x + eps * v_half
        v = v_half - eps / 2 * grad(x)
        out.append((x.copy(), v.copy()))
    return out


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def check_hmc_reduction(energy: EnergyModel, eps: float, M: int, n_steps: int = 100,
                        seed: int = 0, tol: float = 1e-12) -> PropertyResult:
    """Zero-head network steps against the textbook integrator, step by step.

    Runs ``n_steps`` transitions of M leapfrog steps each, re-drawing the
    momentum before each one, and compares after every leapfrog step.
    """
    rng = np.random.default_rng(seed)
    n = energy.dim
    params = init_params(n, 10, M, seed)
    masks = make_masks(n, M, seed)
    cfg = IntegratorConfig(eps, M)
    x = energy.sample(rng, 1)[0]
    worst, worst_ld = 0.0, 0.0
    for _ in range(n_steps):
        v = rng.standard_normal(n)
        oracle = textbook_leapfrog(x, v, energy.grad, eps, M)
        state = AugmentedState(x, v, 1)
        for t in range(1, M + 1):
            res = forward_step(state, t, params, masks, energy, cfg)
            state = res.state_out
            ox, ov = oracle[t - 1]
            worst = max(worst, rel_err(state.x, ox), rel_err(state.v, ov))
            worst_ld = max(worst_ld, abs(res.log_jacobian))
        x = state.x
    return _result("hmc_reduction", max(worst, worst_ld), tol,
                   f"(log-Jacobian max {worst_ld:.1e})")


def random_setup(n: int, M: int, seed: int, n_hidden: int = 10, head_scale: float = 0.1):
    params = randomize_heads(init_params(n, n_hidden, M, seed), seed + 1000, head_scale)
    masks = make_masks(n, M, seed + 2000)
    return params, masks


def involution_errors(params, masks, energy, cfg, x, v, d, propose_fn=propose):
    """(relative state error, |forward + backward log-Jacobian|) for F L F L."""
    state = AugmentedState(x, v, d)
    first = propose_fn(state, params, masks, energy, cfg)
    second = propose_fn(first.state_out, params, masks, energy, cfg)
    out = second.state_out
    state_err = max(rel_err(out.x, x), rel_err(out.v, v))
    if not np.array_equal(np.asarray(out.d), np.asarray(d)):
        state_err = np.inf
    ld_err = float(np.max(np.abs(np.asarray(first.log_jacobian) + np.asarray(second.log_jacobian))))
    return state_err, ld_err


def check_involution(dims=(2, 10, 50), steps=(1, 5, 10), draws: int = 50, seed: int = 0,
                     tol: float = 1e-8, propose_fn=propose) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst_state, worst_ld = 0.0, 0.0
    combos = [(n, M) for n in dims for M in steps]
    for k in range(draws):
        n, M = combos[k % len(combos)]
        energy = build_energy({"kind": "std_gaussian", "dim": n})
        params, masks = random_setup(n, M, seed + k)
        cfg = IntegratorConfig(float(rng.uniform(0.05, 0.3)), M)
        x = rng.standard_normal(n)
        v = rng.standard_normal(n)
        d = int(rng.choice([-1, 1]))
        se, le = involution_errors(params, masks, energy, cfg, x, v, d, propose_fn)
        worst_state, worst_ld = max(worst_state, se), max(worst_ld, le)
    err = max(worst_state, worst_ld)
    return _result("involution", err, tol,
                   f"(state {worst_state:.1e}, log-Jacobian {worst_ld:.1e})")


def fd_log_det(params, masks, energy, cfg, x, v, h: float = 1e-6) -> float:
    """log|det| of the central-difference Jacobian of (x, v) -> L(x, v)."""
    n = len(x)
    z0 = np.concatenate([x, v])

    def f(z):
        out = apply_operator(AugmentedState(z[:n], z[n:], 1), params, masks, energy, cfg,
                             strict=True).state_out
        return np.concatenate([out.x, out.v])

    jac = np.empty((2 * n, 2 * n))
    for i in range(2 * n):
        dz = np.zeros(2 * n)
        dz[i] = h
        jac[:, i] = (f(z0 + dz) - f(z0 - dz)) / (2 * h)
    return float(np.linalg.slogdet(jac)[1])


def check_jacobian(steps=(1, 2), draws: int = 10, seed: int = 0, tol: float = 1e-4) -> PropertyResult:
    rng = np.random.default_rng(seed)
    energy = build_energy({"kind": "std_gaussian", "dim": 2})
    worst = 0.0
    for k in range(draws):
        M = steps[k % len(steps)]
        params, masks = random_setup(2, M, seed + k, head_scale=0.5)
        cfg = IntegratorConfig(float(rng.uniform(0.1, 0.5)), M)
        x, v = rng.standard_normal(2), rng.standard_normal(2)
        analytic = apply_operator(AugmentedState(x, v, 1), params, masks, energy, cfg).log_jacobian
        worst = max(worst, abs(analytic - fd_log_det(params, masks, energy, cfg, x, v)))
    return _result("jacobian", worst, tol)


def _row_losses(state, params, masks, energy, cfg, lam):
    """Per-row loss with the same flooring and divergence handling as the objective."""
    res = propose(state, params, masks, energy, cfg)
    a, divergent = accept_prob(state, res, energy)
    delta = np.sum((np.nan_to_num(res.state_out.x) - state.x) ** 2, axis=-1)
    vals = np.asarray(loss_term(np.where(divergent, 0.0, delta * a), lam), dtype=float)
    return np.where(divergent, float(loss_term(np.array(DELTA_A_FLOOR), lam)), vals)


def loss_gradient_errors(n: int, n_hidden: int, M: int, seed: int, kind: str = "rough_well",
                         batch: int = 3, h: float = 1e-6, abs_floor: float = 1e-8,
                         h_retry: float = 1e-5, tol: float = 1e-4):
    """Max relative error of the taped loss gradient against central differences.

    Covers every network parameter and the log step size.  Entries whose
    absolute error is below ``abs_floor`` count as exact.  Entries off by more
    than ``tol`` at step ``h`` are retried once at ``h_retry``: a small step loses
    digits to roundoff, a large one can straddle a relu or clamp kink, and a
    correct gradient survives at least one of the two.
    """
    rng = np.random.default_rng(seed)
    spec = {"kind": kind, "dim": n}
    if kind == "rough_well":
        spec["eta"] = 0.5
    energy = build_energy(spec)
    params, masks = random_setup(n, M, seed, n_hidden=n_hidden, head_scale=0.3)
    lam, lam_b = float(rng.uniform(0.05, 0.3)), 0.5
    p = AugmentedState(rng.standard_normal((batch, n)), rng.standard_normal((batch, n)),
                       rng.choice([-1, 1], size=batch))
    q = AugmentedState(rng.standard_normal((batch, n)), rng.standard_normal((batch, n)),
                       rng.choice([-1, 1], size=batch))
    log_eps = np.log(rng.uniform(0.1, 0.3))
    theta = np.append(params.to_flat(), log_eps)

    def rows_at(th):
        pp = params.from_flat(th[:-1])
        icfg = IntegratorConfig(np.exp(th[-1]), M)
        return _row_losses(p, pp, masks, energy, icfg, lam), _row_losses(q, pp, masks, energy, icfg, lam)

    tape = ad.Tape()
    taped = params.on_tape(tape)
    le = tape.leaf(log_eps)
    obj = batch_objective(p, q, taped, masks, energy, IntegratorConfig(ad.exp(le), M), lam, lam_b)
    grad = np.append(grad_params(obj.loss, taped), ad.grad_of(obj.loss, [le])[0])
    rp, rq = rows_at(theta)
    if abs(rp.mean() + lam_b * rq.mean() - float(ad.value(obj.loss))) > 1e-9 * abs(float(ad.value(obj.loss))):
        raise AssertionError("row losses do not reproduce the batch objective")
    # difference row by row: rejected rows sit at the floored constant lam^2/floor,
    # which would otherwise swamp the quotient with roundoff
    def quotient(i, step):
        e = np.zeros_like(theta)
        e[i] = step
        (pp, qp), (pm, qm) = rows_at(theta + e), rows_at(theta - e)
        return (np.mean(pp - pm) + lam_b * np.mean(qp - qm)) / (2 * step)

    def errors(fd):
        diff = np.abs(grad - fd)
        rel = diff / np.maximum(np.maximum(np.abs(fd), np.abs(grad)), 1e-300)
        rel[diff <= abs_floor] = 0.0
        return rel

    fd = np.array([quotient(i, h) for i in range(theta.size)])
    rel = errors(fd)
    for i in np.flatnonzero(rel > tol):
        alt = fd.copy()
        alt[i] = quotient(i, h_retry)
        if errors(alt)[i] < rel[i]:
            fd = alt
    rel = errors(fd)
    return float(rel.max()), grad, fd


def check_gradients(configs: int = 20, seed: int = 0, tol: float = 1e-4,
                    max_n: int = 4, max_hidden: int = 8, max_M: int = 3) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(configs):
        n = int(rng.integers(1, max_n + 1))
        nh = int(rng.integers(2, max_hidden + 1))
        M = int(rng.integers(1, max_M + 1))
        kind = ["rough_well", "std_gaussian", "mog"][k % 3]
        err = loss_gradient_errors(n, nh, M, seed + k, kind=kind)[0]
        worst = max(worst, err)
    return _result("loss_gradient", worst, tol)


def energy_derivative_errors(energy: EnergyModel, points: int = 100, seed: int = 0):
    """(max gradient relative error, max HVP relative error) against finite differences."""
    rng = np.random.default_rng(seed)
    n = energy.dim
    scale = np.sqrt(np.diag(energy.covariance()))
    g_err, h_err = 0.0, 0.0
    for _ in range(points):
        x = energy.mean() + scale * rng.standard_normal(n)
        w = rng.standard_normal(n)
        step = 1e-5 * max(1.0, float(np.max(np.abs(x))))
        fd_g = np.array([(energy.energy(x + step * e) - energy.energy(x - step * e)) / (2 * step)
                         for e in np.eye(n)])
        g = energy.grad(x)
        g_err = max(g_err, rel_err(g, fd_g) if np.max(np.abs(fd_g)) > 1e-8 else
                    float(np.max(np.abs(g - fd_g))))
        hs = 1e-5
        fd_h = (energy.grad(x + hs * w) - energy.grad(x - hs * w)) / (2 * hs)
        h = energy.hvp(x, w)
        h_err = max(h_err, rel_err(h, fd_h))
    return g_err, h_err


def check_acceptance_bounds(energy, params, masks, cfg, seed=0, draws=200) -> PropertyResult:
    rng = np.random.default_rng(seed)
    n = energy.dim
    state = AugmentedState(3 * rng.standard_normal((draws, n)), rng.standard_normal((draws, n)),
                           rng.choice([-1, 1], size=draws))
    a, _ = accept_prob(state, propose(state, params, masks, energy, cfg), energy)
    out_of_range = float(np.max(np.maximum(0.0, np.maximum(a - 1.0, -a))))
    return _result("acceptance_bounds", out_of_range, 0.0)


def check_suite(params: NetParams | None = None, masks=None, energy: EnergyModel | None = None,
                cfg: IntegratorConfig | None = None, seed: int = 0, quick: bool = False,
                propose_fn=propose) -> list[PropertyResult]:
    """Run every registered property; ``quick`` limits to n <= 10, M <= 5."""
    if energy is None:
        energy = build_energy({"kind": "std_gaussian", "dim": 2})
    if cfg is None:
        cfg = IntegratorConfig(0.1, 10 if params is None else params.M)
    if params is None:
        params, masks = random_setup(energy.dim, cfg.M, seed)
    results = [check_hmc_reduction(energy, cfg.eps, cfg.M, n_steps=20 if quick else 100, seed=seed)]
    if quick:
        results.append(check_involution(dims=(2, 10), steps=(1, 5), draws=12, seed=seed,
                                        propose_fn=propose_fn))
        results.append(check_jacobian(draws=4, seed=seed))
        results.append(check_gradients(configs=4, seed=seed))
    else:
        results.append(check_involution(seed=seed, propose_fn=propose_fn))
        results.append(check_jacobian(seed=seed))
        results.append(check_gradients(seed=seed))
    # the supplied sampler itself
    rng = np.random.default_rng(seed)
    x = energy.sample(rng, 8)
    v = rng.standard_normal(x.shape)
    se, le = involution_errors(params, masks, energy, cfg, x, v, rng.choice([-1, 1], size=8), propose_fn)
    results.append(_result("involution_supplied", max(se, le), 1e-8))
    results.append(check_acceptance_bounds(energy, params, masks, cfg, seed))
    g_err, h_err = energy_derivative_errors(energy, points=20 if quick else 100, seed=seed)
    results.append(_result("energy_gradient", g_err, 1e-5))
    results.append(_result("energy_hvp", h_err, 1e-4))
    return results
