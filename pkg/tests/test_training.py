import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2hmc import autodiff as ad
from l2hmc.checks import loss_gradient_errors
from l2hmc.energy import build_energy
from l2hmc.integrator import AugmentedState, IntegratorConfig, accept_prob, make_masks, propose
from l2hmc.netfn import init_params, randomize_heads
from l2hmc.training import (ConfigError, OptimizerState, TrainConfig, adam_step,
                            anneal_temperature, batch_objective, clip_by_global_norm, loss_term,
                            paper_defaults, train, tune_hmc)

G2 = build_energy({"kind": "std_gaussian", "dim": 2})


def test_loss_term_examples():
    assert loss_term(0.01, 0.1) == pytest.approx(0.0, abs=1e-15)
    assert loss_term(2.0, 1.0) == -1.5
    assert loss_term(0.0, 0.1) == pytest.approx(0.01 / 1e-6 - 1e-6 / 0.01)
    with pytest.raises(ValueError):
        loss_term(0.0, 0.1, floor=None)
    with pytest.raises(ValueError):
        loss_term(1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.05, 3.0))
def test_loss_antisymmetry(c, lam):
    a = loss_term(c, lam, floor=None)
    b = loss_term(lam ** 4 / c, lam, floor=None)
    assert a == pytest.approx(-b, rel=1e-9, abs=1e-9)


def _batch(n_rows, seed, n=2):
    rng = np.random.default_rng(seed)
    return AugmentedState(rng.normal(size=(n_rows, n)), rng.normal(size=(n_rows, n)),
                          rng.choice([-1, 1], n_rows))


def _setup():
    params = randomize_heads(init_params(2, 6, 3, seed=0), seed=1)
    return params, make_masks(2, 3, seed=0), IntegratorConfig(0.2, 3)


def test_objective_lam_b_zero_is_p_term_only():
    params, masks, cfg = _setup()
    p, q = _batch(5, 0), _batch(7, 1)
    a = batch_objective(p, q, params, masks, G2, cfg, 0.1, 0.0).loss
    b = batch_objective(p, None, params, masks, G2, cfg, 0.1, 0.0).loss
    assert a == b
    c = batch_objective(p, q, params, masks, G2, cfg, 0.1, 1.0).loss
    d = batch_objective(q, None, params, masks, G2, cfg, 0.1, 0.0).loss
    assert c == pytest.approx(a + d, rel=1e-12)


def test_objective_single_element_matches_loss_term():
    params, masks, cfg = _setup()
    s = _batch(1, 3)
    res = propose(s, params, masks, G2, cfg)
    a, _ = accept_prob(s, res, G2)
    delta = np.sum((res.state_out.x - s.x) ** 2)
    obj = batch_objective(s, None, params, masks, G2, cfg, 0.1, 0.0)
    assert obj.loss == pytest.approx(float(loss_term(delta * a[0], 0.1)), rel=1e-12)


def test_objective_all_rejected_hits_floor():
    params, masks = init_params(2, 4, 2, seed=0), make_masks(2, 2, seed=0)
    cfg = IntegratorConfig(50.0, 2)  # wildly unstable, so every proposal is rejected
    s = _batch(10, 4)
    obj = batch_objective(s, None, params, masks, build_energy({"kind": "icg", "dim": 2}), cfg,
                          0.1, 0.0)
    assert obj.loss == pytest.approx(0.01 / 1e-6, rel=1e-3)


def test_objective_is_deterministic():
    params, masks, cfg = _setup()
    p = _batch(6, 5)
    assert (batch_objective(p, None, params, masks, G2, cfg, 0.1, 0.0).loss
            == batch_objective(p, None, params, masks, G2, cfg, 0.1, 0.0).loss)


@pytest.mark.parametrize("kind", ["std_gaussian", "mog", "rough_well"])
def test_objective_gradient_matches_fd(kind):
    rel, grad, fd = loss_gradient_errors(2, 4, 2, seed=3, kind=kind)
    assert np.count_nonzero(np.abs(grad) > 1e-6) > grad.size // 2
    assert rel <= 1e-4


def test_adam_one_step():
    theta, opt = adam_step(np.zeros(3), np.ones(3), OptimizerState.zeros(3), 1e-3)
    np.testing.assert_allclose(theta, -1e-3 / (1 + 1e-8), rtol=1e-12)
    assert opt.step == 1


def test_adam_zero_gradient_keeps_params_and_decays_moments():
    opt = OptimizerState(np.ones(2), np.ones(2), 5)
    theta, new = adam_step(np.array([1.0, 2.0]), np.zeros(2), opt, 1e-3)
    assert np.all(new.m == 0.9) and np.all(new.v == 0.999)
    # first moment is nonzero, so the step is not zero; with zero moments it is
    theta0, _ = adam_step(np.array([1.0, 2.0]), np.zeros(2), OptimizerState.zeros(2), 1e-3)
    np.testing.assert_array_equal(theta0, [1.0, 2.0])


def test_adam_constant_gradient_step_size():
    theta, opt = np.zeros(2), OptimizerState.zeros(2)
    g = np.array([3.0, -0.5])
    for _ in range(5000):
        prev = theta
        theta, opt = adam_step(theta, g, opt, 1e-3)
    np.testing.assert_allclose(theta - prev, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_skips_non_finite():
    theta, opt = adam_step(np.ones(2), np.array([np.nan, 1.0]), OptimizerState.zeros(2), 1e-3)
    np.testing.assert_array_equal(theta, [1.0, 1.0])
    assert opt.skipped == 1 and opt.step == 0


def test_clip():
    g = np.array([30.0, 40.0])
    np.testing.assert_allclose(clip_by_global_norm(g, 10.0), [6.0, 8.0])
    np.testing.assert_array_equal(clip_by_global_norm(g, 100.0), g)


def test_anneal_schedule():
    assert anneal_temperature(0, 101) == 5.0
    assert anneal_temperature(100, 101) == pytest.approx(1.0, rel=1e-15)
    assert anneal_temperature(50, 101) == pytest.approx(np.sqrt(5.0), rel=1e-14)
    with pytest.raises(ValueError):
        anneal_temperature(101, 101)


@pytest.mark.parametrize("field, value", [("lam", 0.0), ("lam", -1.0), ("lam_b", -0.1),
                                          ("batch_size", 0), ("n_iters", 0), ("T0", 0.5),
                                          ("eps", -0.1)])
def test_config_validation_names_field(field, value):
    with pytest.raises(ConfigError) as info:
        TrainConfig(**{field: value})
    assert info.value.field == field
    if field == "lam":
        assert "lambda" in str(info.value)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    cfg = TrainConfig.from_dict({"n_iters": 3})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_paper_defaults():
    scg = paper_defaults("scg")
    assert (scg.n_hidden, scg.M, scg.batch_size, scg.n_iters, scg.lr, scg.lam_b) == \
        (10, 10, 200, 5000, 1e-3, 0.0)
    assert paper_defaults("icg").lam_b == 0.0
    assert paper_defaults("mog").lam_b == 1.0 and paper_defaults("mog").anneal
    assert paper_defaults("rough_well").lam_b == 1.0 and not paper_defaults("rough_well").anneal


def test_training_reduces_objective_and_is_deterministic():
    cfg = TrainConfig(n_iters=200, batch_size=50, M=5, eps=0.2, seed=0)
    a = train(cfg, G2)
    loss = np.array(a.report.loss)
    assert loss[-50:].mean() < loss[:50].mean()
    assert len(loss) == 200 and len(a.report.acceptance) == 200
    b = train(TrainConfig(n_iters=20, batch_size=50, M=5, eps=0.2, seed=0), G2)
    c = train(TrainConfig(n_iters=20, batch_size=50, M=5, eps=0.2, seed=0), G2)
    np.testing.assert_array_equal(b.params.to_flat(), c.params.to_flat())
    assert b.eps == c.eps


def test_iteration_zero_is_hmc():
    seen = []
    cfg = TrainConfig(n_iters=1, batch_size=100, M=5, eps=0.3, seed=2)
    train(cfg, G2, callback=lambda it, rep: seen.append(rep.acceptance[-1]))
    # recompute with a zero-head sampler on the same initial batch draws
    from l2hmc.training import _draw_q, _resample
    rng = np.random.default_rng(np.random.SeedSequence([2, 2]))
    p = _resample(rng, _draw_q(rng, 100, 2, cfg).x)
    params = init_params(2, 10, 5, 2)
    res = propose(p, params, make_masks(2, 5, 3), G2, IntegratorConfig(0.3, 5))
    a, _ = accept_prob(p, res, G2)
    assert seen[0] == pytest.approx(float(np.mean(a)), rel=1e-12)


def test_tune_hmc():
    one = tune_hmc(G2, 5, [0.2], steps_per_candidate=50, n_chains=4)
    assert one.best_eps == 0.2
    res = tune_hmc(G2, 10, np.logspace(-2, 0, 9), steps_per_candidate=300, n_chains=10)
    row = next(r for r in res.table if r["eps"] == res.best_eps)
    assert 0.4 <= row["acceptance"] <= 0.95
    again = tune_hmc(G2, 10, np.logspace(-2, 0, 9), steps_per_candidate=300, n_chains=10)
    assert again.best_eps == res.best_eps
    with pytest.raises(ValueError):
        tune_hmc(G2, 5, [], steps_per_candidate=10)
