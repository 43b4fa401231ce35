"""Association, consensus ADMM and the two-timescale loop."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranslice.channels import generate_channel_samples
from ranslice.config import parse_config
from ranslice.errors import InvalidParameterError
from ranslice.orchestrator import (ConsensusState, admm_round, algorithm1, algorithm2_minislot,
                                   association_utility, exhaustive_association,
                                   greedy_association, greedy_order)
from ranslice.subproblem import UrllcContext, min_power


def bandwidth_tolerance(ctx):
    """Largest bandwidth excess allowed by the per-device cut tolerance."""
    return ctx.n_devices * ctx.cfg.algo.cut_tol * (1.0 + ctx.coeff)


def test_admm_two_sample_arithmetic():
    st0 = ConsensusState(np.array([0.0]), np.zeros((2, 1)), np.array([[0.2], [-0.2]]), 1.0)
    out = admm_round(st0, np.array([[1.0], [3.0]]))
    assert out.omega_global[0] == pytest.approx(2.0)
    np.testing.assert_allclose(out.psi.ravel(), [-0.8, 0.8])


def test_admm_fixed_point():
    st0 = ConsensusState.start([1.5, 2.5], 4, 0.3)
    out = admm_round(st0, np.tile([1.5, 2.5], (4, 1)))
    np.testing.assert_allclose(out.omega_global, [1.5, 2.5])
    assert np.all(out.psi == 0) and out.delta == 0.0


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**31 - 1), st.integers(1, 15))
@settings(max_examples=60)
def test_admm_dual_sum_stays_zero(M, S, seed, rounds):
    rng = np.random.default_rng(seed)
    state = ConsensusState.start(rng.uniform(0.2, 5, S), M, rng.uniform(1e-3, 2.0))
    for _ in range(rounds):
        state = admm_round(state, rng.uniform(0.2, 5.0, (M, S)))
        scale = max(1.0, float(np.max(np.abs(state.psi))))
        assert np.all(state.dual_sum() <= 1e-12 * scale * M)


def test_admm_shape_check():
    with pytest.raises(InvalidParameterError):
        admm_round(ConsensusState.start([1.0], 2, 1.0), np.ones((3, 1)))


def test_greedy_order_prefers_short_latency(cfg):
    ctx = UrllcContext(cfg)
    order = greedy_order(ctx)
    # first slice has the 1 ms bound and therefore the larger gain
    assert set(order[:3]) == {0, 1, 2}
    assert list(order) == list(greedy_order(ctx))


def one_device_cfg(**kw):
    u = {"J": 1, "K": 2, "slices": [{"devices": 1, "D_ms": 1.0, "lambda": 0.1}]}
    u.update(kw)
    return parse_config({"urllc": u})


def test_greedy_single_device_served():
    cfg = one_device_cfg()
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    a = greedy_association(h, [1.0] * 3, ctx)
    assert a.served.tolist() == [True]
    assert exhaustive_association(h, [1.0] * 3, ctx).served.tolist() == [True]


def test_zero_budget_serves_nobody():
    base = one_device_cfg()
    cfg = one_device_cfg(E_j_W=base.miot_reserve_power())
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    assert not greedy_association(h, [1.0] * 3, ctx).served.any()
    assert not exhaustive_association(h, [1.0] * 3, ctx).served.any()


def test_exhaustive_refuses_large_instances():
    cfg = parse_config({"urllc": {"slices": [{"devices": 17, "D_ms": 1.0, "lambda": 0.1}]}})
    ctx = UrllcContext(cfg)
    with pytest.raises(InvalidParameterError):
        exhaustive_association(np.zeros((17, cfg.J * cfg.K)), [1.0] * 3, ctx)


def tight_cfg():
    # two RRHs with a small URLLC power budget so that association matters
    cfg = parse_config({"urllc": {"J": 2, "K": 2, "area_km": 4.0}})
    return parse_config({"urllc": {"J": 2, "K": 2, "area_km": 4.0,
                                   "E_j_W": cfg.miot_reserve_power() + 2e-4}})


@pytest.mark.parametrize("seed", [1, 2])
def test_greedy_feasible_and_not_worse_than_singletons(seed):
    cfg = tight_cfg()
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, seed).h[0]
    omega = [2.0, 2.0, 2.0]
    a = greedy_association(h, omega, ctx)
    r = a.result
    assert r.feasible
    assert r.residuals["power"] <= 1e-9
    assert r.residuals["bandwidth"] <= bandwidth_tolerance(ctx)
    u = association_utility(a, ctx)
    for i in range(ctx.n_devices):
        b = np.zeros(ctx.n_devices, bool)
        b[i] = True
        single = min_power(h, b, omega, ctx)
        if single.feasible:
            v = ctx.gain[i] - cfg.ugl.eta * single.total_power()
            assert u >= v - 1e-6
    ex = exhaustive_association(h, omega, ctx)
    assert association_utility(ex, ctx) >= u - 1e-6


def test_greedy_deterministic():
    cfg = tight_cfg()
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 5).h[0]
    a = greedy_association(h, [2.0] * 3, ctx)
    b = greedy_association(h, [2.0] * 3, ctx)
    assert a.served.tolist() == b.served.tolist()


def test_minislot_decision_matches_training_sample(cfg):
    s = generate_channel_samples(cfg, 1, 0)
    omega = np.array([3.0, 2.9, 2.5])
    ctx = UrllcContext(cfg)
    d = algorithm2_minislot(cfg, omega, s.h[0], ctx)
    ref = greedy_association(s.h[0], omega, ctx).result
    assert d.served.tolist() == ref.served.tolist()
    assert d.tightness >= 1 - 1e-6
    power = np.array([np.sum(np.abs(g) ** 2) for g in d.beamformers])
    np.testing.assert_allclose(power, ref.traces(), rtol=1e-6, atol=1e-15)


def test_fallback_when_bandwidth_too_small():
    # three slices need at least 3 * a * (1 + alpha_g) = 0.567 MHz
    cfg = parse_config({"system": {"W_MHz": 0.5}})
    plan = algorithm1(cfg, generate_channel_samples(cfg, 1, 0))
    assert plan.fallback and plan.status == "fallback"
    assert np.all(plan.omega == 0)


@pytest.mark.slow
def test_single_sample_run_is_consistent(cfg):
    c = cfg.with_algo(M=1, k_max=60)
    plan = algorithm1(c, generate_channel_samples(c, 1, 0))
    assert plan.status == "ok"
    assert np.all(plan.omega >= np.array([iv.omega_lb_hat for iv in plan.intervals]) - 1e-9)
    assert (1 + c.alpha_g) * plan.omega.sum() <= c.W
    for h in plan.history:
        assert h["dual_sum"] <= 1e-12
