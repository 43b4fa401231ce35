"""Discrete-event random-access simulator."""
import math
from dataclasses import replace

import numpy as np
import pytest

from ranslice.config import AccessControl, MiotSliceProfile, RadioParams
from ranslice.errors import InvalidParameterError
from ranslice.miot import gamma_poisson_pmf, interference_laplace
from ranslice.simcore import (DeploymentRealization, cell_device_counts, laplace_mc_estimate,
                              nearest_rrh, sample_deployment, sample_gamma_poisson,
                              simulate_replication, torus_distance, validate_mc)

RADIO = RadioParams(rho_o=1e-12, sigma2=1e-12, lambda_R=3.0, xi=54, a=0.18, L_bits=2000.0)


def test_rrh_count_is_zero_truncated_poisson():
    # empty draws are redrawn, so the count law is Poisson(3) conditioned on >= 1
    counts = np.array([sample_deployment(3.0, [1.0], 1.0, np.random.default_rng(s)).n_rrh
                       for s in range(10_000)])
    lam = 3.0
    mean = lam / (1 - math.exp(-lam))
    var = (lam + lam**2) / (1 - math.exp(-lam)) - mean**2
    assert abs(counts.mean() - mean) <= 3 * math.sqrt(var / counts.size)
    assert counts.min() >= 1


def test_nearest_association_and_single_rrh(rng):
    pts = rng.uniform(0, 1, (50, 2))
    assert np.all(nearest_rrh(pts, np.array([[0.3, 0.7]]), 1.0) == 0)
    rrh = rng.uniform(0, 1, (5, 2))
    idx = nearest_rrh(pts, rrh, 1.0)
    d = torus_distance(pts, rrh, 1.0)
    assert np.all(d[np.arange(50), idx] == d.min(axis=1))


def test_torus_wraps():
    d = torus_distance(np.array([[0.05, 0.5]]), np.array([[0.95, 0.5]]), 1.0)
    assert d[0, 0] == pytest.approx(0.1)


def test_deployment_bookkeeping():
    dep = sample_deployment(3.0, [50.0, 20.0], 2.0, np.random.default_rng(0))
    assert len(dep.device_positions) == 2
    for s in range(2):
        assert cell_device_counts(dep, s).sum() == dep.device_positions[s].shape[0]
    with pytest.raises(InvalidParameterError):
        sample_deployment(0.0, [1.0], 1.0, np.random.default_rng(0))


def test_gamma_poisson_sampler_chi_square():
    from scipy.stats import chisquare
    alpha = 1.7
    x = sample_gamma_poisson(alpha, 100_000, np.random.default_rng(1))
    k = 12
    obs = np.bincount(np.minimum(x, k), minlength=k + 1)
    p = gamma_poisson_pmf(np.arange(k), alpha)
    exp = np.append(p, 1 - p.sum()) * x.size
    assert chisquare(obs, exp).pvalue > 0.01


@pytest.mark.parametrize("varpi,alpha", [(1e10, 0.5), (2e11, 2.0), (1e12, 0.2)])
def test_laplace_estimator_agrees(varpi, alpha):
    m, se = laplace_mc_estimate(varpi, alpha, 1e-12, 200_000, np.random.default_rng(2))
    assert abs(m - interference_laplace(varpi, alpha, 1e-12)) <= 3 * se + 1e-12


def _one_cell(n, theta, xi):
    rrh = np.array([[0.5, 0.5]])
    pts = np.random.default_rng(0).uniform(0, 1, (n, 2))
    dep = DeploymentRealization(rrh, (pts,), (np.zeros(n, dtype=int),), 1.0)
    prof = MiotSliceProfile(0, 1.0, theta, 5.0)
    return dep, replace(RADIO, xi=xi), prof


def test_vanishing_threshold_always_succeeds():
    dep, radio, prof = _one_cell(200, 1e-12, 54)
    rec = simulate_replication(dep, radio, AccessControl(), [prof], 1, 20, np.random.default_rng(3))
    att = rec.attempts[1:, 0]
    assert att.sum() > 0
    assert rec.successes[1:, 0].sum() == att.sum()


def test_no_collisions_gives_rayleigh_outage():
    theta = 0.7
    dep, radio, prof = _one_cell(300, theta, 10**9)
    rec = simulate_replication(dep, radio, AccessControl(), [prof], 1, 30, np.random.default_rng(4))
    n, k = rec.attempts.sum(), rec.successes.sum()
    p = math.exp(-theta * radio.sigma2 / radio.rho_o)
    assert abs(k / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_queues_empty_before_first_arrival():
    dep, radio, prof = _one_cell(10, 0.5, 54)
    rec = simulate_replication(dep, radio, AccessControl(), [prof], 1, 3, np.random.default_rng(0))
    assert rec.attempts[0, 0] == 0 and rec.mean_queue[0, 0] == 0


def test_validation_run_is_deterministic(cfg):
    small = replace(cfg, mc=replace(cfg.mc, replications=4))
    a = validate_mc(small, seed=3, T=12)
    b = validate_mc(small, seed=3, T=12, workers=2)
    np.testing.assert_array_equal(a.p_hat, b.p_hat)
    np.testing.assert_array_equal(a.attempts, b.attempts)
    assert np.all(np.isnan(a.p_hat[0]))  # nothing queued at the first minislot
    assert not a.defined[0].any()
