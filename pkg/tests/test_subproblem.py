"""Per-sample convexified subproblem, both solution routes and rank-one recovery."""
import logging

import numpy as np
import pytest

from ranslice.channels import generate_channel_samples
from ranslice.config import parse_config
from ranslice.orchestrator import miot_weights, trust_intervals
from ranslice.subproblem import (MiotTerms, UrllcContext, block_selector, min_power,
                                 rank_one_recovery, record_solves, snr_scale, solve_subproblem,
                                 tightness_ratio)
from ranslice.surrogate import build_surrogate, success_curve


def small_cfg(**urllc):
    u = {"J": 1, "K": 2, "slices": [{"devices": 1, "D_ms": 1.0, "lambda": 0.1}]}
    u.update(urllc)
    return parse_config({"urllc": u})


def test_block_selector():
    Z = block_selector(3, 2, 1)
    assert np.trace(Z) == 2 and Z[2, 2] == 1 and Z[3, 3] == 1 and Z[0, 0] == 0


def test_rank_one_recovery_examples(rng, caplog):
    g0 = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    rec = rank_one_recovery(np.outer(g0, g0.conj()))
    assert rec.ratio == pytest.approx(1.0, abs=1e-12) and rec.exact
    phase = np.vdot(rec.g, g0) / abs(np.vdot(rec.g, g0))
    np.testing.assert_allclose(rec.g * phase, g0, atol=1e-10)
    with caplog.at_level(logging.WARNING, logger="ranslice.subproblem"):
        full = rank_one_recovery(np.eye(6))
    assert full.ratio == pytest.approx(1 / 6) and not full.exact
    assert "not rank one" in caplog.text
    assert tightness_ratio(np.zeros((3, 3))) == 1.0


def test_single_device_brute_force():
    cfg = small_cfg()
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 4).h[0]
    omega = np.array([10.0, 10.0, 10.0])
    res = min_power(h, np.array([True]), omega, ctx)
    assert res.status == "optimal"
    G = res.G[0]
    H = np.outer(h[0], h[0].conj())
    lam = np.linalg.eigvalsh(H)[-1]
    # beamformer aligned with the channel
    assert np.real(np.trace(H @ G)) == pytest.approx(lam * np.real(np.trace(G)), rel=1e-6)
    # scalar bisection on transmit power for the bandwidth budget
    room = cfg.W - (1 + cfg.alpha_g) * omega.sum()
    snr_per_w = lam / (cfg.ugl.phi_snr * cfg.ugl.sigma2_u)
    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ctx.bandwidth([True], [mid * snr_per_w]) <= room:
            hi = mid
        else:
            lo = mid
    assert np.real(np.trace(G)) == pytest.approx(hi, rel=1e-6)
    assert res.residuals["bandwidth"] <= 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_routes_agree_on_min_power(cfg, seed):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, seed).h[0]
    _, ivs = trust_intervals(cfg)
    omega = np.array([iv.s_star for iv in ivs])
    served = np.ones(ctx.n_devices, bool)
    red = min_power(h, served, omega, ctx, method="reduced")
    sdp = min_power(h, served, omega, ctx, method="sdp")
    assert red.feasible == sdp.feasible
    if red.feasible:
        assert red.total_power() == pytest.approx(sdp.total_power(), rel=1e-6)
        for r in (red, sdp):
            assert r.residuals["bandwidth"] <= 1e-7
            assert r.residuals["power"] <= 1e-9
            assert np.all(r.tightness >= 1 - 1e-6)


def _terms(cfg, M=1, psi=None, mu=None):
    p_ne, ivs = trust_intervals(cfg)
    lb = np.array([iv.omega_lb_hat for iv in ivs])
    ub = np.array([iv.omega_ub for iv in ivs])
    star = np.array([iv.s_star for iv in ivs])
    w0 = 0.5 * (lb + star)
    sg = build_surrogate(w0, cfg.miot, cfg.radio, 1.0, p_ne, ivs, miot_weights(cfg))
    psi = np.zeros(cfg.n_miot) if psi is None else psi
    return MiotTerms(sg, lb, ub, psi, w0, cfg.algo.mu if mu is None else mu, M), p_ne, ivs


def test_routes_agree_on_utility_objective(cfg):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 3).h[0]
    terms, _, _ = _terms(cfg, M=20)
    served = np.ones(ctx.n_devices, bool)
    red = solve_subproblem(h, served, terms, ctx, M=20, method="reduced")
    sdp = solve_subproblem(h, served, terms, ctx, M=20, method="sdp")
    assert red.status == "optimal" and sdp.feasible
    assert red.objective == pytest.approx(sdp.objective, rel=1e-6, abs=1e-9)
    np.testing.assert_allclose(red.omega, sdp.omega, atol=1e-4)


def test_no_urllc_served_matches_grid(cfg):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    terms, _, ivs = _terms(cfg)
    res = solve_subproblem(h, np.zeros(ctx.n_devices, bool), terms, ctx, M=1)
    assert res.status == "optimal"
    # separable objective: one 1-D grid per slice, clipped to the box
    p, q, _ = terms.coefficients()
    for s, iv in enumerate(ivs):
        grid = np.linspace(terms.lb[s], terms.ub[s], 200_001)
        best = grid[np.argmin(0.5 * p[s] * grid**2 + q[s] * grid)]
        assert res.omega[s] == pytest.approx(best, abs=2 * (grid[1] - grid[0]))
    assert (1 + cfg.alpha_g) * res.omega.sum() <= cfg.W


def test_large_penalty_pins_global_value(cfg):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    terms, _, _ = _terms(cfg, mu=1e6)
    res = solve_subproblem(h, np.ones(ctx.n_devices, bool), terms, ctx, M=20)
    np.testing.assert_allclose(res.omega, terms.omega_bar, atol=1e-5)


def test_zero_power_budget_is_infeasible():
    cfg = small_cfg()
    reserve = cfg.miot_reserve_power()
    cfg = small_cfg(E_j_W=reserve)
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    assert not min_power(h, np.array([True]), [1.0] * 3, ctx).feasible
    assert min_power(h, np.array([False]), [1.0] * 3, ctx).feasible


def test_bandwidth_exhausted_is_infeasible(cfg):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    res = min_power(h, np.ones(ctx.n_devices, bool), [20.0, 20.0, 20.0], ctx)
    assert res.status == "infeasible"


def test_record_solves_collects_results(cfg):
    ctx = UrllcContext(cfg)
    h = generate_channel_samples(cfg, 1, 0).h[0]
    with record_solves() as bag:
        min_power(h, np.ones(ctx.n_devices, bool), [3.0, 3.0, 3.0], ctx)
    assert len(bag) == 1
    min_power(h, np.ones(ctx.n_devices, bool), [3.0, 3.0, 3.0], ctx)
    assert len(bag) == 1


def test_snr_scale_units(cfg):
    assert snr_scale(cfg) == pytest.approx(1e-3 / (cfg.ugl.phi_snr * cfg.ugl.sigma2_u))


def test_surrogate_value_at_expansion(cfg):
    terms, p_ne, _ = _terms(cfg)
    sg = terms.surrogate
    w = miot_weights(cfg)
    for s, prof in enumerate(cfg.miot):
        assert sg.value[s] == pytest.approx(
            w[s] * success_curve(sg.local_point[s], prof, cfg.radio, 1.0, p_ne[s]))
