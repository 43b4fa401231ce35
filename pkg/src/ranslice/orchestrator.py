"""Two-timescale slice resource orchestration.

Slot level: sample-average approximation over ``M`` channel samples with
consensus ADMM on the mIoT bandwidths; each sample solves its convexified
subproblem after a greedy URLLC association.  Minislot level: bandwidths
stay fixed while association and beamformers are re-optimized for the
sensed channels.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .channels import (STREAM_SENSED, ChannelSampleSet, draw_channels,
                       generate_channel_samples, make_layout, rng_for)
from .config import SystemConfig
from .errors import InvalidParameterError, SliceInfeasibleError
from .miot import access_probability, evolve_slot, miot_utility
from .subproblem import (MiotTerms, SubproblemResult, UrllcContext, constraint_residuals,
                         min_power, rank_one_recovery, solve_subproblem,
                         urllc_value)
from .surrogate import build_surrogate, find_trust_interval, operating_nonempty

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 16


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def greedy_order(ctx: UrllcContext, G_prev=None, M=1):
    """Device order by decreasing gain ``rho (gain - eta tr G) / M``.

    Ties go to the lowest index.
    """
    tr = np.zeros(ctx.n_devices) if G_prev is None else np.array(
        [float(np.real(np.trace(g))) for g in G_prev])
    gain = ctx.cfg.ugl.rho_tilde * (ctx.gain - ctx.cfg.ugl.eta * tr) / M
    return np.argsort(-gain, kind="stable")


@dataclass
class Association:
    """Greedy or exhaustive association outcome.

    ``result`` is the minimum-power solution for ``served`` at the fixed
    bandwidths; ``tests`` counts feasibility problems solved.
    """

    served: np.ndarray
    result: SubproblemResult
    tests: int = 0


def greedy_association(h, omega, ctx: UrllcContext, G_prev=None, M=1, method="auto",
                       shortcut=True):
    """Greedy URLLC association at fixed mIoT bandwidths.

    Devices are tried in :func:`greedy_order`; each is kept iff the set
    with it still admits beamformers meeting the per-RRH power and total
    bandwidth budgets.  Feasibility is monotone under removal of devices,
    so when the full set is feasible every step accepts and the full set is
    returned after a single test (``shortcut``).

    Parameters
    ----------
    h : ndarray, shape (N_u, J*K)
    omega : array_like
        mIoT bandwidths in MHz (held fixed).
    ctx : UrllcContext
    G_prev : list of ndarray, optional
        Power matrices of the previous iteration (zero when omitted).
    M : int
    method : str
        Subproblem route, see :func:`~ranslice.subproblem.solve_subproblem`.
    shortcut : bool

    Returns
    -------
    Association
    """
    n = ctx.n_devices
    tests = 0
    if shortcut:
        full = min_power(h, np.ones(n, bool), omega, ctx, method=method)
        tests += 1
        if full.feasible:
            return Association(full.served, full, tests)
    served = np.zeros(n, bool)
    best = min_power(h, served, omega, ctx, method=method)
    tests += 1
    for i in greedy_order(ctx, G_prev, M):
        trial = served.copy()
        trial[i] = True
        res = min_power(h, trial, omega, ctx, method=method)
        tests += 1
        if res.feasible:
            served, best = trial, res
    return Association(served, best, tests)


def exhaustive_association(h, omega, ctx: UrllcContext, method="auto"):
    """Utility-maximizing association by enumeration of all subsets.

    Subsets are visited by decreasing gain upper bound ``sum gain_i``;
    supersets of infeasible sets are skipped (feasibility is monotone) and
    the search stops once no remaining bound can beat the incumbent.  The
    result equals the argmax over all ``2^N`` subsets.

    Raises
    ------
    InvalidParameterError
        If there are more than 16 devices.
    """
    n = ctx.n_devices
    if n > EXHAUSTIVE_LIMIT:
        raise InvalidParameterError(f"exhaustive search limited to {EXHAUSTIVE_LIMIT} devices")
    eta = ctx.cfg.ugl.eta
    subsets = []
    for mask in range(1 << n):
        b = np.array([(mask >> i) & 1 for i in range(n)], dtype=bool)
        subsets.append((float(np.sum(ctx.gain[b])), mask, b))
    subsets.sort(key=lambda t: (-t[0], t[1]))
    infeasible_masks: list[int] = []
    best_val, best = -np.inf, None
    tests = 0
    for bound, mask, b in subsets:
        if bound <= best_val:
            break
        if any(mask & bad == bad for bad in infeasible_masks):
            continue
        res = min_power(h, b, omega, ctx, method=method)
        tests += 1
        if not res.feasible:
            infeasible_masks.append(mask)
            continue
        val = bound - eta * res.total_power()
        if val > best_val:
            best_val, best = val, res
    if best is None:
        best = min_power(h, np.zeros(n, bool), omega, ctx, method=method)
    return Association(best.served, best, tests)


def association_utility(assoc: Association, ctx: UrllcContext):
    """``sum_i b_i gain_i - eta sum_i b_i tr(G_i)`` of an association."""
    return urllc_value(assoc.result, ctx)


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------

@dataclass
class ConsensusState:
    """Global bandwidths, per-sample copies and scaled duals."""

    omega_global: np.ndarray
    omega_local: np.ndarray
    psi: np.ndarray
    mu: float
    k: int = 0
    delta: float = np.inf

    @staticmethod
    def start(omega0, M, mu):
        omega0 = np.asarray(omega0, dtype=float)
        return ConsensusState(omega0.copy(), np.tile(omega0, (M, 1)),
                              np.zeros((M, omega0.size)), float(mu))

    def dual_sum(self):
        return np.abs(self.psi.sum(axis=0))


def admm_round(state: ConsensusState, omega_local) -> ConsensusState:
    """Average and dual update of consensus ADMM.

    ``omega_global <- mean(omega_m + psi_m / mu)`` followed by
    ``psi_m <- psi_m + mu (omega_m - omega_global)``; ``delta`` is the
    L1 change of the global variable.
    """
    x = np.asarray(omega_local, dtype=float)
    if x.shape != state.psi.shape:
        raise InvalidParameterError("one local copy per sample required")
    z = np.mean(x + state.psi / state.mu, axis=0)
    psi = state.psi + state.mu * (x - z)
    return ConsensusState(z, x.copy(), psi, state.mu, state.k + 1,
                          float(np.sum(np.abs(z - state.omega_global))))


@dataclass
class SubproblemRecord:
    """Diagnostics of one solved subproblem."""

    k: int
    m: int
    q: int
    method: str
    status: str
    objective: float
    kkt: float
    max_residual: float
    tightness: float
    n_served: int


@dataclass
class SlotPlan:
    """Outcome of the slot-level optimization.

    Attributes
    ----------
    omega : ndarray
        Consensus bandwidth per mIoT slice (zeros under the fallback).
    fallback : bool
        True when the mIoT slices could not be created and all bandwidth
        went to URLLC.
    converged : bool
    history : list of dict
        One entry per outer iteration: ``k``, ``delta``, ``dual_sum``,
        ``consensus_gap``, ``inner``.
    records : list of SubproblemRecord
    p_ne : ndarray
        Operating non-empty probabilities used by the surrogate.
    intervals : tuple
    runtime_s : float
    """

    omega: np.ndarray
    fallback: bool
    converged: bool
    history: list = field(default_factory=list)
    records: list = field(default_factory=list)
    p_ne: np.ndarray | None = None
    intervals: tuple = ()
    state: ConsensusState | None = None
    local: list = field(default_factory=list)
    runtime_s: float = 0.0
    reason: str = ""
    status: str = "ok"

    @property
    def iterations(self):
        return len(self.history)

    def tightness(self):
        return np.array([r.tightness for r in self.records if np.isfinite(r.tightness)])


def miot_weights(cfg: SystemConfig):
    lam = np.array([p.lambda_I for p in cfg.miot], dtype=float)
    return lam / lam.sum()


def trust_intervals(cfg: SystemConfig, p_ne=None):
    """Operating non-empty probabilities and per-slice trust intervals.

    Raises
    ------
    SliceInfeasibleError
        If some slice cannot reach its success floor.
    """
    a = cfg.algo
    if p_ne is None:
        p_ne = operating_nonempty(cfg.miot, cfg.radio, cfg.access, a.T, cfg.W, a.ps_init,
                                  a.laplace_mode, a.bisection_tol)
    p_nr = access_probability(cfg.access)
    ivs = tuple(find_trust_interval(p, cfg.radio, p_nr, p_ne[s], p.pi_s, cfg.radio.a, cfg.W,
                                    a.bisection_tol, a.laplace_mode)
                for s, p in enumerate(cfg.miot))
    return np.asarray(p_ne), ivs


def algorithm1(cfg: SystemConfig, samples: ChannelSampleSet, method="auto", callback=None):
    """ADMM-based slot-level bandwidth allocation.

    Parameters
    ----------
    cfg : SystemConfig
    samples : ChannelSampleSet
    method : str
        Subproblem route.
    callback : callable, optional
        Called with ``(k, state)`` after every outer iteration.

    Returns
    -------
    SlotPlan
    """
    t0 = time.perf_counter()
    a = cfg.algo
    M = samples.M
    ctx = UrllcContext(cfg)
    S = cfg.n_miot
    try:
        p_ne, ivs = trust_intervals(cfg)
    except SliceInfeasibleError as exc:
        log.info("mIoT slices infeasible (%s); all bandwidth to URLLC", exc)
        return SlotPlan(np.zeros(S), True, True, reason=str(exc), status="fallback",
                        runtime_s=time.perf_counter() - t0)
    lb = np.array([iv.omega_lb_hat for iv in ivs])
    ub = np.array([iv.omega_ub for iv in ivs])
    star = np.array([iv.s_star for iv in ivs])
    if (1.0 + cfg.alpha_g) * lb.sum() > cfg.W:
        return SlotPlan(np.zeros(S), True, True, p_ne=p_ne, intervals=ivs,
                        reason="lower bandwidth bounds exceed W", status="fallback",
                        runtime_s=time.perf_counter() - t0)
    weights = miot_weights(cfg)
    p_nr = access_probability(cfg.access)
    tol = a.admm_tol_factor * S * cfg.radio.a
    state = ConsensusState.start(0.5 * (lb + star), M, a.mu)
    local = [None] * M
    G_prev = [None] * M
    plan = SlotPlan(state.omega_global.copy(), False, False, p_ne=p_ne, intervals=ivs)
    for k in range(a.k_max):
        inner = []
        x = np.zeros((M, S))
        for m in range(M):
            res, q_used = _local_solve(cfg, ctx, samples.h[m], state, m, local[m], G_prev[m],
                                       lb, ub, p_nr, p_ne, ivs, weights, M, method, k, plan)
            if res is None:
                plan.status = "infeasible"
                plan.omega = np.zeros(S)
                plan.reason = f"no feasible local solution for sample {m}"
                plan.runtime_s = time.perf_counter() - t0
                return plan
            local[m] = res
            G_prev[m] = res.G
            x[m] = res.omega
            inner.append(q_used)
        state = admm_round(state, x)
        gap = float(np.max(np.abs(x - state.omega_global)))
        plan.history.append({"k": k + 1, "delta": state.delta,
                             "dual_sum": float(np.max(state.dual_sum())),
                             "consensus_gap": gap, "inner": int(np.sum(inner))})
        if callback is not None:
            callback(k, state)
        if state.delta < tol:
            plan.converged = True
            break
    plan.omega = state.omega_global.copy()
    plan.state = state
    plan.local = local
    plan.runtime_s = time.perf_counter() - t0
    return plan


def _local_solve(cfg, ctx, h, state, m, prev, G_prev, lb, ub, p_nr, p_ne, ivs, weights, M,
                 method, k, plan):
    """Inner loop of one sample: greedy association then the convex subproblem."""
    a = cfg.algo
    omega_loc = state.omega_local[m].copy()
    served = prev.served if prev is not None else None
    last = None
    q_used = 0
    for q in range(a.q_max):
        q_used = q + 1
        served = _associate(h, omega_loc, ctx, prev, G_prev, served, M, method)
        sg = build_surrogate(omega_loc, cfg.miot, cfg.radio, p_nr, p_ne, ivs, weights)
        terms = MiotTerms(sg, lb, ub, state.psi[m], state.omega_global, a.mu, M)
        res = solve_subproblem(h, served, terms, ctx, M=M, method=method,
                               kkt_tol=a.kkt_tol, cut_tol=a.cut_tol)
        if not res.feasible:
            if last is None:
                return None, q_used
            break
        plan.records.append(_record(k, m, q, res))
        done = last is not None and abs(res.objective - last.objective) <= \
            a.inner_rel_tol * max(1.0, abs(last.objective))
        prev, G_prev, last = res, res.G, res
        if done or np.allclose(res.omega, omega_loc, rtol=0, atol=1e-12):
            break
        omega_loc = res.omega
    return last, q_used


def _associate(h, omega, ctx, prev, G_prev, served, M, method):
    """Association for the next subproblem, skipping solves when possible.

    If the previous solution served every device and is still feasible at
    ``omega`` by direct evaluation, the full set is kept without a solve.
    """
    if prev is not None and prev.served.all():
        r = constraint_residuals(h, prev.G, prev.served, omega, omega, omega, ctx)
        if r["bandwidth"] <= 0 and r["power"] <= 0:
            return prev.served
    return greedy_association(h, omega, ctx, G_prev, M, method).served


def _record(k, m, q, res: SubproblemResult):
    r = res.residuals
    worst = max(r.get("bandwidth", 0.0), r.get("power", 0.0), r.get("box", 0.0), r.get("psd", 0.0))
    return SubproblemRecord(k, m, q, res.method, res.status, res.objective, res.kkt_residual,
                            worst, float(np.min(res.tightness)) if res.tightness.size else np.nan,
                            int(res.served.sum()))


# ---------------------------------------------------------------------------
# minislot level
# ---------------------------------------------------------------------------

@dataclass
class MinislotDecision:
    """Association and beamformers of one minislot."""

    t: int
    served: np.ndarray
    beamformers: np.ndarray
    utility_urllc: float
    power_rrh: np.ndarray
    tightness: float
    method: str


def algorithm2_minislot(cfg: SystemConfig, omega, h, ctx=None, G_prev=None, method="auto", t=0):
    """Association and beamforming for one minislot at fixed bandwidths.

    Returns
    -------
    MinislotDecision
    """
    ctx = ctx or UrllcContext(cfg)
    assoc = greedy_association(h, omega, ctx, G_prev, 1, method)
    res = assoc.result
    n, N = ctx.n_devices, ctx.dim
    beams = np.zeros((n, N), dtype=complex)
    ratios = []
    for i in range(n):
        if res.served[i] and np.real(np.trace(res.G[i])) > 0:
            rec = rank_one_recovery(res.G[i])
            beams[i] = rec.g
            ratios.append(rec.ratio)
    power = np.zeros(cfg.J)
    for i in range(n):
        if res.served[i]:
            power += (np.abs(beams[i]) ** 2).reshape(cfg.J, cfg.K).sum(axis=1)
    u = float(np.sum(ctx.gain[res.served])) - cfg.ugl.eta * float(np.sum(np.abs(beams) ** 2))
    return MinislotDecision(t, res.served.copy(), beams, u, power,
                            min(ratios) if ratios else 1.0, res.method)


@dataclass
class SlotOutcome:
    """Realized utilities of one slot."""

    plan: SlotPlan
    decisions: list
    utility_miot: float
    utility_urllc: float
    utility_total: float
    omega_urllc: float
    energy_urllc: float
    served_mean: float

    def audit_power(self, cfg: SystemConfig):
        """Largest per-RRH power excess over all minislots (reserve included)."""
        reserve = cfg.miot_reserve_power()
        if not self.decisions:
            return float("nan")
        return max(float(np.max(reserve + d.power_rrh - cfg.E_j)) for d in self.decisions)


def sensed_channels(cfg: SystemConfig, seed, T, layout=None):
    """Channel realizations of the minislots, from a stream separate from SAA."""
    if layout is None:
        ls = cfg.algo.layout_seed if cfg.algo.layout_seed is not None else seed
        layout = make_layout(cfg, ls)
    rng = rng_for(seed, STREAM_SENSED)
    return np.stack([draw_channels(cfg, layout, rng) for _ in range(T)])


def run_slot(cfg: SystemConfig, seed=None, M=None, method="auto", samples=None):
    """Slot-level optimization followed by the minislot loop.

    Returns
    -------
    SlotOutcome
        ``utility_total = U^I + rho U^u`` with both terms averaged over the
        ``T`` minislots.
    """
    seed = cfg.algo.seed if seed is None else seed
    M = cfg.algo.M if M is None else M
    if samples is None:
        samples = generate_channel_samples(cfg, M, seed)
    plan = algorithm1(cfg, samples, method)
    if plan.status == "infeasible":
        return evaluate_plan(cfg, plan, None, method)
    return evaluate_plan(cfg, plan, sensed_channels(cfg, seed, cfg.algo.T, samples.layout), method)


def evaluate_plan(cfg: SystemConfig, plan: SlotPlan, hs, method="auto"):
    """Run the minislot loop of a plan on sensed channels ``hs`` (T, N_u, J*K).

    Utilities are NaN when the plan is infeasible.
    """
    if plan.status == "infeasible":
        nan = float("nan")
        return SlotOutcome(plan, [], nan, nan, nan, nan, nan, nan)
    hs = np.asarray(hs)
    T = hs.shape[0]
    ctx = UrllcContext(cfg)
    if plan.fallback:
        u_i = 0.0
        omega = np.zeros(cfg.n_miot)
    else:
        omega = plan.omega
        traj = evolve_slot(cfg.miot, cfg.radio, cfg.access, omega, T, cfg.algo.ps_init,
                           cfg.algo.laplace_mode)
        u_i = miot_utility(traj, cfg.miot)
    decisions = []
    G_prev = None
    for t in range(T):
        d = algorithm2_minislot(cfg, omega, hs[t], ctx, G_prev, method, t + 1)
        G_prev = [np.outer(g, g.conj()) for g in d.beamformers]
        decisions.append(d)
    u_u = float(np.mean([d.utility_urllc for d in decisions]))
    energy = float(np.mean([np.sum(np.abs(d.beamformers) ** 2) for d in decisions]))
    return SlotOutcome(
        plan=plan, decisions=decisions, utility_miot=u_i, utility_urllc=u_u,
        utility_total=u_i + cfg.ugl.rho_tilde * u_u,
        omega_urllc=cfg.W - (1.0 + cfg.alpha_g) * float(np.sum(omega)),
        energy_urllc=energy,
        served_mean=float(np.mean([d.served.sum() for d in decisions])))
