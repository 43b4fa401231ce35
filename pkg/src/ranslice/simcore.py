"""Monte-Carlo oracle for the mIoT random-access closed forms.

Devices and RRHs are Poisson point processes on a square with wrap-around
distances.  Every device keeps an integer packet queue; active devices run
slotted-ALOHA random access with truncated channel-inversion power control,
so every receiver sees ``rho_o`` times a unit-mean exponential fade.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .channels import STREAM_MC, rng_for
from .config import AccessControl, RadioParams, SystemConfig
from .errors import InvalidParameterError, SimulationError
from .miot import SHAPE, QueueTrajectory, access_probability, evolve_slot, packets_per_success

MAX_DEPLOY_RETRIES = 100


@dataclass(frozen=True)
class DeploymentRealization:
    """One draw of the RRH and device point processes.

    Attributes
    ----------
    rrh_positions : ndarray, shape (R, 2)
    device_positions : tuple of ndarray
        One ``(n_s, 2)`` array per slice, km.
    association : tuple of ndarray
        Index of the nearest RRH of every device.
    side : float
        Side of the square in km.
    """

    rrh_positions: np.ndarray
    device_positions: tuple
    association: tuple
    side: float

    @property
    def n_rrh(self):
        return self.rrh_positions.shape[0]


def torus_distance(p, q, side):
    """Pairwise wrap-around distances between point sets ``p`` and ``q``."""
    d = np.abs(p[:, None, :] - q[None, :, :])
    d = np.minimum(d, side - d)
    return np.sqrt(np.sum(d * d, axis=2))


def nearest_rrh(points, rrh, side):
    """Nearest-RRH association under wrap-around distance."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return np.argmin(torus_distance(points, rrh, side), axis=1)


def sample_deployment(lambda_R, lambda_I, side, rng) -> DeploymentRealization:
    """Draw RRHs and per-slice devices as homogeneous PPPs.

    Parameters
    ----------
    lambda_R : float
        RRH intensity per km^2.
    lambda_I : sequence of float
        Device intensity per slice, per km^2.
    side : float
        Square side in km.
    rng : numpy.random.Generator

    Raises
    ------
    SimulationError
        If no RRH appears after repeated draws.
    """
    if lambda_R <= 0 or side <= 0 or any(l <= 0 for l in lambda_I):
        raise InvalidParameterError("intensities and side must be positive")
    area = side * side
    for _ in range(MAX_DEPLOY_RETRIES):
        n_r = rng.poisson(lambda_R * area)
        if n_r > 0:
            break
    else:
        raise SimulationError("no RRH drawn after repeated attempts")
    rrh = rng.uniform(0.0, side, (n_r, 2))
    devs, assoc = [], []
    for lam in lambda_I:
        pts = rng.uniform(0.0, side, (rng.poisson(lam * area), 2))
        devs.append(pts)
        assoc.append(nearest_rrh(pts, rrh, side))
    return DeploymentRealization(rrh, tuple(devs), tuple(assoc), float(side))


def cell_device_counts(dep: DeploymentRealization, s=0):
    """Number of slice-``s`` devices associated with each RRH."""
    return np.bincount(dep.association[s], minlength=dep.n_rrh)


def sample_gamma_poisson(alpha_s, size, rng):
    """Draws from the cell-load law: Poisson with a gamma(3.5, alpha) mean."""
    if alpha_s < 0:
        raise InvalidParameterError("alpha must be non-negative")
    return rng.poisson(rng.gamma(SHAPE, alpha_s, size) if alpha_s > 0 else np.zeros(size))


def laplace_mc_estimate(varpi, alpha_s, rho_o, n, rng):
    """Sample estimate of the interference Laplace transform.

    A typical device shares its cell with ``N`` devices (``N`` from the
    cell-load law, the device itself included when ``N >= 1``); the other
    ``N - 1`` each add ``rho_o`` times an exponential fade.  Returns the
    mean of ``1{N >= 1} exp(-varpi I)`` and its standard error.
    """
    N = sample_gamma_poisson(alpha_s, n, rng)
    others = np.maximum(N - 1, 0)
    # a sum of k unit exponentials is gamma(k, 1)
    I = np.where(others > 0, rng.gamma(np.maximum(others, 1), 1.0), 0.0) * rho_o
    vals = np.where(N >= 1, np.exp(-varpi * I), 0.0)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


@dataclass(frozen=True)
class ReplicationRecord:
    """Per-minislot counts of one replication, arrays of shape ``(T, S)``."""

    attempts: np.ndarray
    successes: np.ndarray
    mean_queue: np.ndarray
    active: np.ndarray


def simulate_replication(dep: DeploymentRealization, radio: RadioParams, ctrl: AccessControl,
                         profiles, prach, T, rng) -> ReplicationRecord:
    """Run the random-access protocol for ``T`` minislots on one deployment.

    Per minislot and slice: devices with a non-empty queue pass access
    control with probability ``P_nr``, pick a preamble and a PRACH
    uniformly, and succeed when ``h / (sigma2 / rho_o + sum of same-cell,
    same-preamble, same-PRACH fades) >= theta``.  A success pops
    ``floor(x)`` packets plus one more with probability ``frac(x)``.
    Arrivals of minislot ``t`` join the queues at ``t + 1``.
    """
    S = len(profiles)
    prach = np.broadcast_to(np.asarray(prach, dtype=int), (S,))
    if np.any(prach < 1):
        raise InvalidParameterError("every slice needs at least one PRACH")
    p_nr = access_probability(ctrl)
    noise = radio.sigma2 / radio.rho_o
    att = np.zeros((T, S), dtype=np.int64)
    suc = np.zeros((T, S), dtype=np.int64)
    mq = np.zeros((T, S))
    act = np.zeros((T, S), dtype=np.int64)
    for s, prof in enumerate(profiles):
        n = dep.device_positions[s].shape[0]
        cell = dep.association[s]
        q = np.zeros(n, dtype=np.int64)
        arr = prof.arrivals(T)
        x = packets_per_success(radio.a, prof.theta_th, radio.L_bits, radio.minislot_s)
        whole, frac = int(np.floor(x)), x - np.floor(x)
        F = int(prach[s])
        for t in range(T):
            mq[t, s] = q.mean() if n else 0.0
            busy = np.nonzero(q > 0)[0]
            act[t, s] = busy.size
            if p_nr < 1.0 and busy.size:
                busy = busy[rng.random(busy.size) < p_nr]
            if busy.size:
                pre = rng.integers(0, radio.xi, busy.size)
                ch = rng.integers(0, F, busy.size)
                key = (cell[busy] * radio.xi + pre) * F + ch
                _, inv = np.unique(key, return_inverse=True)
                h = rng.exponential(1.0, busy.size)
                interf = np.bincount(inv, weights=h)[inv] - h
                ok = h >= prof.theta_th * (noise + interf)
                att[t, s] = busy.size
                suc[t, s] = int(ok.sum())
                winners = busy[ok]
                pop = whole + (rng.random(winners.size) < frac)
                q[winners] = np.maximum(q[winners] - pop, 0)
            if n:
                q += rng.poisson(arr[t], n)
    return ReplicationRecord(att, suc, mq, act)


@dataclass
class MonteCarloResult:
    """Empirical and analytic trajectories of a validation run.

    Attributes
    ----------
    p_hat : ndarray, shape (T, S)
        Success ratio averaged over replications with attempts; NaN where
        no replication attempted.
    p_hat_se : ndarray
        Standard error of ``p_hat`` across replications.
    mean_queue : ndarray
        Mean queue length per device.
    analytic : QueueTrajectory
        Closed-form trajectory at matched parameters.
    """

    p_hat: np.ndarray
    p_hat_se: np.ndarray
    mean_queue: np.ndarray
    attempts: np.ndarray
    analytic: QueueTrajectory
    replications: int

    @property
    def defined(self):
        return np.isfinite(self.p_hat)

    def gaps(self):
        """``|P_s(t) - P_hat_s(t)|`` over defined entries (NaN elsewhere)."""
        return np.abs(self.analytic.p_s - self.p_hat)

    def fraction_within(self, tol=0.05):
        g = self.gaps()[self.defined]
        return float(np.mean(g <= tol)) if g.size else 0.0

    def max_gap(self):
        g = self.gaps()[self.defined]
        return float(np.max(g)) if g.size else float("nan")


def desk_profiles(cfg: SystemConfig):
    """mIoT profiles with intensities scaled for the validation run."""
    return tuple(replace(p, lambda_I=p.lambda_I * cfg.mc.intensity_scale) for p in cfg.miot)


def _one(args):
    cfg, profiles, prach, T, seed, rep = args
    rng = rng_for(seed, STREAM_MC, rep)
    dep = sample_deployment(cfg.radio.lambda_R, [p.lambda_I for p in profiles],
                            cfg.mc.side_km, rng)
    return simulate_replication(dep, cfg.radio, cfg.access, profiles, prach, T, rng)


def validate_mc(cfg: SystemConfig, seed=None, replications=None, T=None, workers=1):
    """Closed form against simulation at desk scale.

    Parameters
    ----------
    cfg : SystemConfig
        ``cfg.mc`` holds the intensity scaling, replication count, square
        side and PRACH count per slice.
    seed : int, optional
    replications : int, optional
    T : int, optional
    workers : int
        Process count; results are merged in replication order, so the
        output does not depend on it.

    Returns
    -------
    MonteCarloResult
    """
    seed = cfg.algo.seed if seed is None else seed
    R = cfg.mc.replications if replications is None else replications
    T = cfg.algo.T if T is None else T
    profiles = desk_profiles(cfg)
    S = len(profiles)
    prach = np.full(S, cfg.mc.prach)
    jobs = [(cfg, profiles, prach, T, seed, r) for r in range(R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(_one, jobs))
    else:
        recs = [_one(j) for j in jobs]
    att = np.stack([r.attempts for r in recs])
    suc = np.stack([r.successes for r in recs])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(att > 0, suc / np.maximum(att, 1), np.nan)
    cnt = np.sum(att > 0, axis=0)
    with np.errstate(invalid="ignore"):
        p_hat = np.where(cnt > 0, np.nanmean(np.where(cnt > 0, ratio, 0.0), axis=0), np.nan)
        sd = np.where(cnt > 1, np.nanstd(np.where(cnt > 0, ratio, 0.0), axis=0, ddof=1), np.nan)
    se = sd / np.sqrt(np.maximum(cnt, 1))
    mq = np.mean(np.stack([r.mean_queue for r in recs]), axis=0)
    analytic = evolve_slot(profiles, cfg.radio, cfg.access, prach * cfg.radio.a, T,
                           cfg.algo.ps_init, cfg.algo.laplace_mode)
    return MonteCarloResult(p_hat, se, mq, att.sum(axis=0), analytic, R)
