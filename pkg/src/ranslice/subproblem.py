"""Per-sample convex subproblem: bandwidth split plus URLLC beamforming.

Each served URLLC device ``i`` gets a Hermitian PSD power matrix ``G_i``
(the rank-one constraint is dropped) and an auxiliary SNR variable
``nu_i <= tr(H_i G_i) / (phi sigma2)``.  The URLLC bandwidth bound is
written with per-device load variables ``v_i >= e_i f_i(nu_i) / (kappa D_i)``,
which are convex in ``nu_i`` and handled by tangent cuts, plus one exact
second-order cone for the square-root term:

    W^u = sum_i v_i + c0 * || K v ||,   K_i = sqrt(sum_j e_j^2 / (e_min e_i)).

Inside the solver powers are in milliwatts; results are reported in watts.

When no per-RRH power budget binds, the relaxation has a matched-filter
minimizer and the remaining program in ``(omega, nu)`` is solved by a
log-barrier Newton method; the PSD route covers every other case and
serves as an independent cross-check.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .conic import (ConicProblem, ConvexCut, cached_embedding_operator, conic_solve,
                    params_to_hermitian, trace_coefficients)
from .config import SystemConfig
from .errors import InvalidParameterError
from .surrogate import TaylorSurrogate
from .urllc import (bound_coefficient, channel_uses, channel_uses_derivative,
                    channel_uses_second_derivative, device_attr, device_gain, device_loads, urllc_bandwidth_bound)

log = logging.getLogger(__name__)

MW = 1e-3  # watts per milliwatt
N_INIT_CUTS = 16
POOL_SIZE = 12


def block_selector(J, K, j):
    """Diagonal selector ``Z_j`` of the antennas of RRH ``j``."""
    Z = np.zeros((J * K, J * K))
    Z[j * K:(j + 1) * K, j * K:(j + 1) * K] = np.eye(K)
    return Z


class UrllcContext:
    """Per-device URLLC constants of one configuration.

    Devices with zero arrival rate carry no load; serving them costs
    nothing and they get ``G = 0``.
    """

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.loads = device_loads(cfg.urllc, cfg.ugl)
        self.D = device_attr(cfg.urllc, "D_s")
        self.L = device_attr(cfg.urllc, "L_bits_u")
        self.gain = device_gain(self.D)
        self.coeff = bound_coefficient(cfg.ugl)
        self.budget = np.full(cfg.J, cfg.E_j - cfg.miot_reserve_power())

    @property
    def n_devices(self):
        return self.loads.size

    @property
    def dim(self):
        return self.cfg.J * self.cfg.K

    def load_bandwidth(self, i, nu):
        """``e_i f_i(nu) / (kappa D_i)`` in MHz."""
        ugl = self.cfg.ugl
        r = channel_uses(self.L[i], nu, ugl.beta_decode)
        return self.loads[i] * r / (ugl.kappa * self.D[i]) * 1e-6

    def load_slope(self, i, nu):
        ugl = self.cfg.ugl
        dr = channel_uses_derivative(self.L[i], nu, ugl.beta_decode)
        return self.loads[i] * dr / (ugl.kappa * self.D[i]) * 1e-6

    def loads_all(self, idx, nu, order=0):
        """Vectorized load bandwidth (``order`` 0) or its derivatives (1, 2)."""
        ugl = self.cfg.ugl
        fn = (channel_uses, channel_uses_derivative, channel_uses_second_derivative)[order]
        r = fn(self.L[idx], nu, ugl.beta_decode)
        return self.loads[idx] * r / (ugl.kappa * self.D[idx]) * 1e-6

    def nu_for_load(self, i, target):
        """Smallest SNR at which device ``i`` alone fits in ``target`` MHz."""
        f = lambda lg: self.load_bandwidth(i, np.exp(lg)) - target
        lo, hi = -80.0, 30.0
        if f(hi) > 0:
            return float(np.exp(hi))
        if f(lo) <= 0:
            return float(np.exp(lo))
        return float(np.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)))

    def bandwidth(self, served, snrs):
        """Exact bound ``W^u`` for served flags and per-device SNRs."""
        served = np.asarray(served, dtype=bool)
        on = served & (self.loads > 0)
        if not on.any():
            return 0.0
        s = np.asarray(snrs, dtype=float)
        if np.any(s[on] <= 0):
            return np.inf
        r = np.zeros(served.size)
        r[on] = channel_uses(self.L[on], s[on], self.cfg.ugl.beta_decode)
        return urllc_bandwidth_bound(on.astype(float), r, self.cfg.urllc, self.cfg.ugl)


def snr_scale(cfg):
    """SNR per milliwatt of unit channel gain, ``1e-3 / (phi sigma2)``."""
    return MW / (cfg.ugl.phi_snr * cfg.ugl.sigma2_u)


def achieved_snr(h, G, cfg):
    """Direct ``h^H G h / (phi sigma2)`` for every device."""
    out = np.zeros(len(G))
    for i, g in enumerate(G):
        v = np.asarray(h)[i]
        out[i] = float(np.real(v.conj() @ g @ v)) / (cfg.ugl.phi_snr * cfg.ugl.sigma2_u)
    return out


def rrh_power(G, served, cfg):
    """Power drawn at each RRH by the served devices, watts."""
    out = np.zeros(cfg.J)
    for i, g in enumerate(G):
        if served[i]:
            out += np.real(np.diag(g)).reshape(cfg.J, cfg.K).sum(axis=1)
    return out


@dataclass
class MiotTerms:
    """mIoT part of the subproblem objective.

    The contribution is ``-model(omega) / M + psi . (omega - omega_bar)
    + mu / 2 ||omega - omega_bar||^2`` on the box ``[lb, ub]``, with
    ``model`` the concave Taylor model.  :meth:`fixed` pins the bandwidth
    (minislot problem, feasibility tests).
    """

    surrogate: TaylorSurrogate | None
    lb: np.ndarray
    ub: np.ndarray
    psi: np.ndarray
    omega_bar: np.ndarray
    mu: float
    M: int

    @staticmethod
    def fixed(omega):
        omega = np.asarray(omega, dtype=float)
        z = np.zeros_like(omega)
        return MiotTerms(None, omega.copy(), omega.copy(), z, omega.copy(), 0.0, 1)

    @property
    def is_fixed(self):
        return self.surrogate is None and np.array_equal(self.lb, self.ub)

    def coefficients(self):
        """Quadratic coefficients ``(p_diag, q, const)`` in omega."""
        p = np.full(self.lb.size, float(self.mu))
        q = self.psi - self.mu * self.omega_bar
        const = float(np.sum(-self.psi * self.omega_bar + 0.5 * self.mu * self.omega_bar**2))
        sg = self.surrogate
        if sg is not None:
            h = sg.concave_hessian()
            x0 = sg.local_point
            p = p - h / self.M
            q = q - (sg.gradient - h * x0) / self.M
            const -= float(np.sum(sg.value - sg.gradient * x0 + 0.5 * h * x0**2)) / self.M
        return p, q, const

    def value(self, omega):
        p, q, c = self.coefficients()
        omega = np.asarray(omega, dtype=float)
        return float(0.5 * np.sum(p * omega**2) + q @ omega + c)


@dataclass
class SubproblemResult:
    """Solution of one subproblem.

    Attributes
    ----------
    status : str
        ``"optimal"``, ``"inaccurate"``, ``"infeasible"``, or
        ``"unresolved"`` when the reduced route cannot certify a solution.
    omega : ndarray
        Bandwidth per mIoT slice in MHz.
    G : list of ndarray
        Power matrices in watts, zero for unserved devices.
    served : ndarray of bool
    nu : ndarray
        SNR per device by direct evaluation.
    objective : float
        Subproblem objective at the returned point.
    residuals : dict
        Independent constraint re-evaluation, see :func:`constraint_residuals`.
    tightness : ndarray
        ``lambda_max / tr`` per served device with nonzero power, measured
        on the raw solver output.
    """

    status: str
    omega: np.ndarray
    G: list
    served: np.ndarray
    nu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = np.nan
    residuals: dict = field(default_factory=dict)
    tightness: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kkt_residual: float = np.nan
    n_cuts: int = 0
    objective_history: list = field(default_factory=list)
    certificate: np.ndarray | None = None
    method: str = ""

    @property
    def feasible(self):
        return self.status != "infeasible"

    def traces(self):
        return np.array([float(np.real(np.trace(g))) for g in self.G])

    def total_power(self):
        return float(np.sum(self.traces()[self.served]))


def _zero_G(ctx):
    N = ctx.dim
    return [np.zeros((N, N), dtype=complex) for _ in range(ctx.n_devices)]


def tightness_ratio(G):
    """``lambda_max(G) / tr(G)``; 1 for the zero matrix."""
    w = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    tr = float(np.sum(w))
    return 1.0 if tr <= 0 else float(w[-1] / tr)


def constraint_residuals(h, G, served, omega, lb, ub, ctx: UrllcContext):
    """Independent re-evaluation of every subproblem constraint.

    Returns
    -------
    dict
        ``bandwidth``: MHz above ``W``; ``power``: watts above the per-RRH
        budget (max over RRHs); ``box``: MHz outside ``[lb, ub]``; ``psd``:
        most negative eigenvalue, sign flipped.  Values ``<= 0`` mean
        satisfied.  ``bandwidth_urllc`` is the URLLC bound itself.
    """
    cfg = ctx.cfg
    served = np.asarray(served, dtype=bool)
    omega = np.asarray(omega, dtype=float)
    snr = achieved_snr(h, G, cfg)
    wu = ctx.bandwidth(served, snr)
    bw = (1.0 + cfg.alpha_g) * float(np.sum(omega)) + wu - cfg.W
    pw = float(np.max(rrh_power(G, served, cfg) - ctx.budget))
    box = float(np.max(np.concatenate([lb - omega, omega - ub, [-np.inf]])))
    psd = max([-float(np.linalg.eigvalsh(g)[0]) for g in G] + [0.0])
    return {"bandwidth": bw, "power": pw, "box": box, "psd": psd, "bandwidth_urllc": wu}


def _cut_row(ctx, i, p0, nv, o_nu, o_v):
    g0 = ctx.load_bandwidth(i, p0)
    d0 = ctx.load_slope(i, p0)
    r = np.zeros(nv)
    r[o_nu] = d0
    r[o_v] = -1.0
    return r, d0 * p0 - g0


@dataclass
class _Setup:
    """Data shared by both solution routes of one subproblem."""

    h: np.ndarray
    served: np.ndarray
    idx: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    fixed: bool
    wfix: float
    avail: float
    nu_min: np.ndarray
    nu_max: np.ndarray
    w_tr: float          # objective weight per watt of transmit power
    const: float
    pd: np.ndarray
    qw: np.ndarray


def _setup(h, served, terms, ctx, M, objective):
    cfg = ctx.cfg
    lb = np.asarray(terms.lb, dtype=float)
    ub = np.asarray(terms.ub, dtype=float)
    if np.any(lb > ub + 1e-12):
        raise InvalidParameterError("empty bandwidth box")
    if objective not in ("utility", "power"):
        raise InvalidParameterError(f"unknown objective {objective!r}")
    idx = np.nonzero(served & (ctx.loads > 0))[0]
    fixed = terms.is_fixed
    avail = cfg.W - (1.0 + cfg.alpha_g) * float(np.sum(lb))
    S = lb.size
    pd, qw, const = np.zeros(S), np.zeros(S), 0.0
    if objective == "power":
        w_tr = 1.0
    else:
        rho = cfg.ugl.rho_tilde
        w_tr = rho * cfg.ugl.eta / M
        const = -rho / M * float(np.sum(ctx.gain[served]))
        if not fixed:
            pd, qw, c0 = terms.coefficients()
            const += c0
    nu_min = np.zeros(idx.size)
    nu_max = np.zeros(idx.size)
    if avail >= 0:
        scale = snr_scale(cfg)
        for k, i in enumerate(idx):
            nu_min[k] = ctx.nu_for_load(i, max(avail, 1e-300))
            amp = np.linalg.norm(h[i].reshape(cfg.J, cfg.K), axis=1)
            nu_max[k] = (amp @ np.sqrt(np.maximum(ctx.budget, 0.0) / MW)) ** 2 * scale
    return _Setup(h, served, idx, lb, ub, fixed,
                  (1.0 + cfg.alpha_g) * float(np.sum(lb)) if fixed else 0.0,
                  avail, nu_min, nu_max, w_tr, const, pd, qw)


_RECORDERS: list = []


@contextmanager
def record_solves():
    """Collect every :class:`SubproblemResult` produced inside the block."""
    bag: list = []
    _RECORDERS.append(bag)
    try:
        yield bag
    finally:
        _RECORDERS.remove(bag)


def solve_subproblem(h, served, terms: MiotTerms, ctx: UrllcContext, M=1,
                     objective="utility", method="auto", cut_pool=None,
                     kkt_tol=1e-6, cut_tol=1e-7):
    """Solve the convexified per-sample problem for a fixed association.

    Parameters
    ----------
    h : ndarray, shape (N_u, J*K)
        Channel vectors of all URLLC devices (square-root watts).
    served : array_like of bool
    terms : MiotTerms
        mIoT objective terms and bandwidth box; ``MiotTerms.fixed`` pins omega.
    ctx : UrllcContext
    M : int
        Sample count scaling the URLLC terms (``rho U / M``).
    objective : {"utility", "power"}
        ``"power"`` minimizes total URLLC transmit power and ignores the
        mIoT terms (feasibility and minislot problems).
    method : {"auto", "sdp", "reduced"}
        ``"sdp"`` solves the PSD relaxation with the generic conic solver.
        ``"reduced"`` uses the closed-form minimizer of the relaxation when
        no per-RRH power budget binds (matched-filter power matrices) and a
        small smooth program in ``(omega, nu)``; it reports ``"unresolved"``
        when a budget would be exceeded.  ``"auto"`` tries ``"reduced"``
        first and falls back to ``"sdp"``.
    cut_pool : dict, optional
        Mutable map ``device -> SNR points`` reused across SDP calls.
    kkt_tol, cut_tol : float

    Returns
    -------
    SubproblemResult
        ``method`` records the route that produced the result.
    """
    res = _solve_subproblem(h, served, terms, ctx, M, objective, method, cut_pool,
                            kkt_tol, cut_tol)
    for bag in _RECORDERS:
        bag.append(res)
    return res


def _solve_subproblem(h, served, terms: MiotTerms, ctx: UrllcContext, M=1,
                      objective="utility", method="auto", cut_pool=None,
                      kkt_tol=1e-6, cut_tol=1e-7):
    h = np.asarray(h)
    served = np.asarray(served, dtype=bool).copy()
    st = _setup(h, served, terms, ctx, M, objective)
    if method not in ("auto", "sdp", "reduced"):
        raise InvalidParameterError(f"unknown method {method!r}")
    # a negative budget means the mIoT reserve alone exceeds E_j
    if st.avail < 0 or np.any(ctx.budget < 0):
        return _infeasible(st, ctx)
    if st.idx.size == 0 and st.fixed:
        res = _result("optimal", h, st.lb.copy(), _zero_G(ctx), served, terms, ctx, M, objective)
        res.method = "trivial"
        return res
    if np.any(st.nu_max < st.nu_min):
        return _infeasible(st, ctx)
    if method in ("auto", "reduced"):
        res = _solve_reduced(st, terms, ctx, M, objective, kkt_tol)
        if res.status != "unresolved" or method == "reduced":
            return res
    return _solve_sdp(st, terms, ctx, M, objective, cut_pool, kkt_tol, cut_tol)


def _infeasible(st, ctx, cert=None, cuts=0, method=""):
    return SubproblemResult("infeasible", st.lb.copy(), _zero_G(ctx), st.served,
                            nu=np.zeros(ctx.n_devices), certificate=cert, n_cuts=cuts,
                            method=method)


def _bandwidth_terms(ctx, idx):
    """Weights of the cone term: ``W^u = sum v + c0 ||kd * v||``."""
    e = ctx.loads[idx]
    return ctx.coeff * np.sqrt(float(np.sum(e**2)) / (float(np.min(e)) * e))


def _solve_reduced(st, terms, ctx, M, objective, kkt_tol):
    """Relaxation optimum when every per-RRH power budget is slack.

    Without the per-RRH constraints the relaxation separates per device
    into ``min tr(G) s.t. tr(H G) >= c``, minimized by the matched filter
    ``G = c h h^H / ||h||^4``.  What remains is convex in ``(omega, nu)``:

        min  f(omega) + sum_i w ||h_i||^{-2} phi sigma2 nu_i
        s.t. (1 + alpha_g) sum omega + Phi(g(nu)) <= W,  omega in box,

    solved with the CVXOPT nonlinear cone solver.  The candidate is accepted
    only if it meets every per-RRH budget, in which case zero multipliers
    on those budgets complete a KKT point of the relaxation.
    """
    cfg = ctx.cfg
    idx, h = st.idx, st.h
    n = idx.size
    S = 0 if st.fixed else st.lb.size
    nv = S + n
    gain2 = np.array([float(np.vdot(h[i], h[i]).real) for i in idx])
    per_snr = cfg.ugl.phi_snr * cfg.ugl.sigma2_u / np.maximum(gain2, 1e-300)  # W per unit SNR
    cost = st.w_tr * per_snr
    ref = np.array([ctx.nu_for_load(i, st.avail / max(n, 1)) for i in idx]) if n else np.zeros(0)
    ref = np.maximum(ref, st.nu_min)
    kd = _bandwidth_terms(ctx, idx) if n else np.zeros(0)
    wcap = cfg.W - st.wfix
    ag = 1.0 + cfg.alpha_g
    pd, qw = st.pd[:S], st.qw[:S]
    # objective and constraint are normalized to O(1) for the interior point
    x_mid = np.concatenate([0.5 * (st.lb[:S] + st.ub[:S]), np.ones(n)])
    osc = float(np.max(np.abs(np.concatenate([pd * x_mid[:S] + qw, cost * ref, [1e-300]]))))
    csc = 1.0 / max(wcap, 1e-9)

    def parts(x):
        nu = ref * x[S:]
        return (nu, ctx.loads_all(idx, nu), ctx.loads_all(idx, nu, 1) * ref,
                ctx.loads_all(idx, nu, 2) * ref**2)

    def fun(x):
        if n and np.any(x[S:] <= 0):
            return None
        w = x[:S]
        f0 = 0.5 * float(np.sum(pd * w * w)) + float(qw @ w) + float(cost @ (ref * x[S:]))
        g0 = np.concatenate([pd * w + qw, cost * ref])
        H0 = np.zeros((nv, nv))
        H0[np.arange(S), np.arange(S)] = pd
        f1 = ag * float(np.sum(w)) - wcap
        g1 = np.zeros(nv)
        g1[:S] = ag
        H1 = np.zeros((nv, nv))
        if n:
            nu, v, dv, d2v = parts(x)
            if not np.all(np.isfinite(v)):
                return None
            kv = kd * v
            nrm = float(np.sqrt(kv @ kv))
            f1 += float(np.sum(v)) + nrm
            dphi = 1.0 + kd * kv / nrm
            g1[S:] = dphi * dv
            hphi = (np.diag(kd**2) - np.outer(kd * kv, kd * kv) / nrm**2) / nrm
            H1[S:, S:] = np.diag(dphi * d2v) + np.outer(dv, dv) * hphi
        return f0 / osc, g0 / osc, H0 / osc, f1 * csc, g1 * csc, H1 * csc

    rows, rhs = [], []
    for s in range(S):
        r = np.zeros(nv)
        r[s] = -1.0
        rows.append(r)
        rhs.append(-st.lb[s])
        r = np.zeros(nv)
        r[s] = 1.0
        rows.append(r)
        rhs.append(st.ub[s])
    for k in range(n):
        r = np.zeros(nv)
        r[S + k] = -1.0
        rows.append(r)
        rhs.append(-st.nu_min[k] / ref[k])
    x0 = _strict_start(st, ctx, idx, kd, ref, S, ag, wcap)
    if x0 is None:
        return SubproblemResult("unresolved", st.lb.copy(), _zero_G(ctx), st.served,
                                method="reduced")
    sol = barrier_newton(fun, x0, np.array(rows).reshape(-1, nv), np.array(rhs), gap_tol=1e-9)
    if sol is None:
        log.info("reduced solve failed; deferring to the SDP route")
        return SubproblemResult("unresolved", st.lb.copy(), _zero_G(ctx), st.served,
                                method="reduced")
    x, kkt, converged = sol
    if not converged and kkt > kkt_tol:
        return SubproblemResult("unresolved", st.lb.copy(), _zero_G(ctx), st.served,
                                method="reduced")
    omega = st.lb.copy() if st.fixed else np.clip(x[:S], st.lb, st.ub)
    G = _zero_G(ctx)
    tight = []
    for k, i in enumerate(idx):
        p = float(ref[k] * x[S + k]) * per_snr[k]
        G[i] = p * np.outer(h[i], h[i].conj()) / gain2[k]
        tight.append(tightness_ratio(G[i]))
    if np.any(rrh_power(G, st.served, cfg) > ctx.budget):
        return SubproblemResult("unresolved", st.lb.copy(), _zero_G(ctx), st.served,
                                method="reduced")
    omega, G = _polish(st.h, omega, G, st.served, st.lb, ctx)
    res = _result("optimal" if converged else "inaccurate",
                  st.h, omega, G, st.served, terms, ctx, M, objective)
    res.tightness = np.array(tight)
    res.kkt_residual = kkt
    res.objective_history = [res.objective]
    res.method = "reduced"
    return res


def _strict_start(st, ctx, idx, kd, ref, S, ag, wcap):
    """Strictly feasible point of the reduced program, or None."""
    slack = wcap - ag * float(np.sum(st.lb[:S]))
    if slack <= 0:
        return None
    span = st.ub[:S] - st.lb[:S]
    tot = ag * float(np.sum(span))
    theta = 0.5 if tot <= 0 else min(0.5, 0.25 * slack / tot)
    w0 = st.lb[:S] + theta * span
    # sum v + c0 ||kd v|| <= sum (1 + |kd|) v keeps the load below half the slack
    share = 0.5 * slack / max(float(np.sum(1.0 + np.abs(kd))), 1.0)
    nu0 = np.array([max(ctx.nu_for_load(i, share), 2.0 * st.nu_min[k]) for k, i in enumerate(idx)])
    return np.concatenate([w0, nu0 / ref]) if idx.size else w0


def barrier_newton(fun, x0, A, b, gap_tol=1e-9, t0=1.0, growth=50.0, max_newton=80):
    """Log-barrier method for ``min f0(x) s.t. f1(x) <= 0, A x <= b``.

    Parameters
    ----------
    fun : callable
        ``fun(x) -> (f0, g0, H0, f1, g1, H1)`` or None outside the domain.
    x0 : ndarray
        Strictly feasible start.
    A, b : ndarray
    gap_tol : float
        Target duality gap ``m / t``, relative to ``max(1, |f0|)``.

    Returns
    -------
    tuple or None
        ``(x, kkt, converged)`` where ``kkt`` bounds the duality gap and
        stationarity residual; None if the start is not strictly feasible.
    """
    x = np.asarray(x0, dtype=float).copy()
    m = 1 + b.size

    def pieces(x, t):
        out = fun(x)
        if out is None:
            return None
        f0, g0, H0, f1, g1, H1 = out
        s = b - A @ x
        if f1 >= 0 or np.any(s <= 0):
            return None
        phi = t * f0 - np.log(-f1) - float(np.sum(np.log(s)))
        grad = t * g0 + g1 / (-f1) + A.T @ (1.0 / s)
        hess = t * H0 + H1 / (-f1) + np.outer(g1, g1) / f1**2 + (A.T / s**2) @ A
        return phi, grad, hess, f0

    t = t0
    cur = pieces(x, t)
    if cur is None:
        return None
    stat = np.inf
    while True:
        for _ in range(max_newton):
            phi, grad, hess, f0 = cur
            try:
                dx = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = float(-grad @ dx)
            if dec <= 1e-12:
                break
            step = 1.0
            while step > 1e-14:
                nxt = pieces(x + step * dx, t)
                if nxt is not None and (dec < 1e-6 or nxt[0] <= phi - 0.25 * step * dec):
                    break
                step *= 0.5
            else:
                break
            x = x + step * dx
            cur = nxt
        stat = float(np.linalg.norm(cur[1])) / t
        gap = m / t
        if gap <= gap_tol * max(1.0, abs(cur[3])):
            return x, max(gap, stat), True
        if t > 1e16:
            return x, max(gap, stat), False
        t *= growth
        cur = pieces(x, t)


def _load_curvature(ctx, i, nu):
    ugl = ctx.cfg.ugl
    d2r = channel_uses_second_derivative(ctx.L[i], nu, ugl.beta_decode)
    return ctx.loads[i] * d2r / (ugl.kappa * ctx.D[i]) * 1e-6


def _solve_sdp(st, terms, ctx, M, objective, cut_pool, kkt_tol, cut_tol):
    """PSD relaxation through :func:`conic_solve` with tangent cuts on the loads."""
    cfg = ctx.cfg
    h, idx = st.h, st.idx
    n = idx.size
    N = ctx.dim
    NN = N * N
    S = 0 if st.fixed else st.lb.size
    scale = snr_scale(cfg)
    o_nu, o_v, o_t = S, S + n, S + 2 * n
    o_x = o_t + (1 if n else 0)
    nv = o_x + n * NN
    q = np.zeros(nv)
    q[:S] = st.qw[:S]
    P = None
    if S and np.any(st.pd != 0):
        P = np.zeros((nv, nv))
        P[np.arange(S), np.arange(S)] = st.pd
    tr_c = trace_coefficients(np.eye(N))
    for k in range(n):
        q[o_x + k * NN:o_x + (k + 1) * NN] = st.w_tr * MW * tr_c

    rows, rhs = [], []

    def add(r, v):
        nrm = float(np.max(np.abs(r))) or 1.0
        rows.append(r / nrm)
        rhs.append(v / nrm)

    for s in range(S):
        r = np.zeros(nv)
        r[s] = -1.0
        add(r, -st.lb[s])
        r = np.zeros(nv)
        r[s] = 1.0
        add(r, st.ub[s])
    r = np.zeros(nv)
    r[:S] = 1.0 + cfg.alpha_g
    if n:
        r[o_v:o_v + n] = 1.0
        r[o_t] = 1.0
    add(r, cfg.W - st.wfix)
    for k, i in enumerate(idx):
        r = np.zeros(nv)
        r[o_nu + k] = -1.0
        add(r, -st.nu_min[k])
        r = np.zeros(nv)
        r[o_nu + k] = 1.0
        r[o_x + k * NN:o_x + (k + 1) * NN] = -trace_coefficients(scale * np.outer(h[i], h[i].conj()))
        add(r, 0.0)
        hi = max(st.nu_max[k], st.nu_min[k] * (1 + 1e-6))
        pts = list(np.geomspace(st.nu_min[k], hi, N_INIT_CUTS))
        if cut_pool is not None:
            pts += [p for p in cut_pool.get(int(i), []) if st.nu_min[k] <= p <= hi]
        for p0 in sorted(set(pts)):
            add(*_cut_row(ctx, i, p0, nv, o_nu + k, o_v + k))
    for j in range(cfg.J if n else 0):
        Zc = trace_coefficients(block_selector(cfg.J, cfg.K, j))
        r = np.zeros(nv)
        for k in range(n):
            r[o_x + k * NN:o_x + (k + 1) * NN] = Zc
        add(r, ctx.budget[j] / MW)
    soc = []
    if n:
        Gq = np.zeros((n + 1, nv))
        Gq[0, o_t] = -1.0
        Gq[1 + np.arange(n), o_v + np.arange(n)] = -_bandwidth_terms(ctx, idx)
        soc.append((Gq, np.zeros(n + 1)))
    E = cached_embedding_operator(N)
    psd = []
    for k in range(n):
        Gs = np.zeros((E.shape[0], nv))
        Gs[:, o_x + k * NN:o_x + (k + 1) * NN] = -E
        psd.append((Gs, np.zeros(E.shape[0]), 2 * N))
    cuts = []
    for k, i in enumerate(idx):
        def fn(x, k=k, i=i):
            nu = max(float(x[o_nu + k]), st.nu_min[k] * 0.5)
            g = np.zeros(nv)
            g[o_nu + k] = ctx.load_slope(i, nu)
            g[o_v + k] = -1.0
            return ctx.load_bandwidth(i, nu) - x[o_v + k], g
        cuts.append(ConvexCut(fn, f"load[{i}]"))
    prob = ConicProblem(q=q, P=P, G_lin=np.array(rows), h_lin=np.array(rhs),
                        soc=soc, psd=psd, cuts=cuts, const=st.const)
    sol = conic_solve(prob, kkt_tol=kkt_tol, cut_tol=cut_tol)
    if sol.x is None:
        return _infeasible(st, ctx, sol.certificate, sol.n_cuts, method="sdp")
    x = sol.x
    omega = st.lb.copy() if st.fixed else np.clip(x[:S], st.lb, st.ub)
    G = _zero_G(ctx)
    tight = []
    for k, i in enumerate(idx):
        X = params_to_hermitian(x[o_x + k * NN:o_x + (k + 1) * NN], N) * MW
        G[i] = 0.5 * (X + X.conj().T)
        if np.real(np.trace(G[i])) > 0:
            tight.append(tightness_ratio(G[i]))
    if cut_pool is not None:
        for k, i in enumerate(idx):
            pool = cut_pool.setdefault(int(i), [])
            val = float(x[o_nu + k])
            if val > 0 and all(abs(val - p) > 1e-9 * val for p in pool):
                pool.append(val)
                del pool[:-POOL_SIZE]
    omega, G = _polish(h, omega, G, st.served, st.lb, ctx)
    res = _result(sol.status, h, omega, G, st.served, terms, ctx, M, objective)
    res.tightness = np.array(tight)
    res.kkt_residual = sol.kkt_residual
    res.n_cuts = sol.n_cuts
    res.objective_history = list(sol.objective_history)
    res.method = "sdp"
    return res



def _polish(h, omega, G, served, lb, ctx):
    """Remove feasibility violations left by solver tolerances.

    Negative eigenvalues are clipped and over-budget power is scaled down.
    A bandwidth excess is taken from the mIoT slices above their lower
    bounds, or else removed by a slight power increase.  All changes are of
    the order of the solver tolerances.
    """
    cfg = ctx.cfg
    for i, g in enumerate(G):
        w, V = np.linalg.eigh(g)
        if w[0] < 0:
            G[i] = (V * np.maximum(w, 0.0)) @ V.conj().T
    used = rrh_power(G, served, cfg)
    if np.any(used > ctx.budget):
        s = float(np.min(np.where(used > 0, ctx.budget / np.maximum(used, 1e-300), np.inf)))
        G = [g * s for g in G]
        used = used * s
    snr = achieved_snr(h, G, cfg)
    ag = 1.0 + cfg.alpha_g

    def over(om, scale=1.0):
        return ag * float(np.sum(om)) + ctx.bandwidth(served, snr * scale) - cfg.W

    ex = over(omega)
    if ex > 0 and omega.size:
        room = omega - lb
        tot = float(np.sum(room))
        if tot > 0:
            omega = omega - room * (min(ex / ag, tot) / tot)
            ex = over(omega)
    if ex > 0:
        smax = float(np.min(np.where(used > 0, ctx.budget / np.maximum(used, 1e-300), np.inf)))
        smax = min(smax, 1.0 + 1e-4)
        if smax > 1.0 and over(omega, smax) <= 0:
            lo, hi = 1.0, smax
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if over(omega, mid) > 0:
                    lo = mid
                else:
                    hi = mid
            G = [g * hi for g in G]
    return omega, G


def _result(status, h, omega, G, served, terms, ctx, M, objective):
    cfg = ctx.cfg
    resid = constraint_residuals(h, G, served, omega, terms.lb, terms.ub, ctx)
    power = float(sum(np.real(np.trace(g)) for i, g in enumerate(G) if served[i]))
    if objective == "power":
        val = power
    else:
        val = 0.0 if terms.is_fixed else terms.value(omega)
        val += cfg.ugl.rho_tilde / M * (cfg.ugl.eta * power - float(np.sum(ctx.gain[served])))
    return SubproblemResult(status=status, omega=np.asarray(omega, dtype=float), G=G,
                            served=served, nu=achieved_snr(h, G, cfg), objective=val,
                            residuals=resid)


def min_power(h, served, omega, ctx: UrllcContext, method="auto", cut_pool=None,
              kkt_tol=1e-6, cut_tol=1e-7):
    """Minimum URLLC power serving ``served`` with the mIoT bandwidth fixed.

    ``status == "infeasible"`` in the result when no beamformers meet both
    the power and bandwidth budgets.
    """
    return solve_subproblem(h, served, MiotTerms.fixed(omega), ctx, objective="power",
                            method=method, cut_pool=cut_pool, kkt_tol=kkt_tol,
                            cut_tol=cut_tol)


def urllc_value(res: SubproblemResult, ctx: UrllcContext):
    """Realized URLLC utility ``sum_i b_i gain_i - eta sum_i b_i tr(G_i)``."""
    if not res.feasible:
        return -np.inf
    return float(np.sum(ctx.gain[res.served])) - ctx.cfg.ugl.eta * res.total_power()


@dataclass
class RankOneResult:
    """Principal-component beamformer and tightness report."""

    g: np.ndarray
    ratio: float
    exact: bool


def rank_one_recovery(G, tol=1e-6):
    """Beamformer ``g = sqrt(lambda_max) u_max`` from a PSD power matrix.

    Parameters
    ----------
    G : ndarray
        Hermitian PSD matrix.
    tol : float
        Tightness tolerance; a ratio below ``1 - tol`` logs a warning.

    Returns
    -------
    RankOneResult
    """
    G = np.asarray(G)
    w, V = np.linalg.eigh(0.5 * (G + G.conj().T))
    if w[0] < -1e-9 * max(1.0, abs(w[-1])):
        raise InvalidParameterError("G must be positive semidefinite")
    tr = float(np.sum(w))
    g = np.sqrt(max(w[-1], 0.0)) * V[:, -1]
    ratio = 1.0 if tr <= 0 else float(w[-1] / tr)
    exact = ratio >= 1.0 - tol
    if not exact:
        log.warning("power matrix not rank one: lambda_max / tr = %.9f", ratio)
    return RankOneResult(g=g, ratio=ratio, exact=exact)
