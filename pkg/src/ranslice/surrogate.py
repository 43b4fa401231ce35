"""Taylor surrogate of the mIoT success probability and its trust interval.

As a function of the slice bandwidth ``omega`` the success probability is

    P(omega) = e^{-theta sigma2 / rho_o} (1 + theta)
               [ (omega / (omega + c z))^{3.5} - (omega / (omega + c))^{3.5} ]

with ``z = theta / (1 + theta)`` and ``c = a P_nr P_ne lambda_I /
(3.5 lambda_R xi)``, so the load is ``alpha = c / omega``.  Derivatives
below are exact derivatives of this expression.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import AccessControl, MiotSliceProfile, RadioParams
from .errors import InvalidParameterError, SliceInfeasibleError
from .miot import (SHAPE, access_probability, alpha_load, evolve_slot,
                   ra_success_probability)

log = logging.getLogger(__name__)


def curve_scale(profile: MiotSliceProfile, radio: RadioParams, p_nr, p_ne):
    """Load constant ``c`` (MHz) such that ``alpha = c / omega``."""
    return radio.a * p_nr * p_ne * profile.lambda_I / (SHAPE * radio.lambda_R * radio.xi)


def _prefactor(profile, radio):
    th = profile.theta_th
    return np.exp(-th * radio.sigma2 / radio.rho_o) * (1.0 + th)


def _kernel_derivs(omega, c):
    """First three derivatives of ``(omega / (omega + c))^{3.5}``."""
    w = np.asarray(omega, dtype=float)
    s = w + c
    d1 = SHAPE * c * w**2.5 / s**4.5
    d2 = SHAPE * c * w**1.5 / s**5.5 * (2.5 * c - 2.0 * w)
    d3 = SHAPE * c * (1.5 * w**0.5 / s**5.5 * (2.5 * c - 2.0 * w)
                      - 5.5 * w**1.5 / s**6.5 * (2.5 * c - 2.0 * w)
                      - 2.0 * w**1.5 / s**5.5)
    return d1, d2, d3


def success_curve(omega, profile, radio, p_nr, p_ne, mode="closed"):
    """Success probability as a function of bandwidth, via the closed forms."""
    al = alpha_load(p_nr, p_ne, profile.lambda_I, radio.lambda_R, radio.xi,
                    np.asarray(omega, dtype=float) / radio.a)
    return ra_success_probability(profile.theta_th, radio.rho_o, radio.sigma2, al, mode)


def _derivative(order, omega, profiles, radio, p_nr, p_ne, weights):
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega <= 0):
        raise InvalidParameterError("omega must be positive")
    p_ne = np.broadcast_to(np.asarray(p_ne, dtype=float), omega.shape)
    w = np.ones(omega.shape) if weights is None else np.asarray(weights, dtype=float)
    out = np.zeros(omega.shape)
    for s, prof in enumerate(profiles):
        c = curve_scale(prof, radio, p_nr, p_ne[s])
        if c == 0.0:
            continue
        z = prof.theta_th / (1.0 + prof.theta_th)
        dz = _kernel_derivs(omega[s], c * z)[order - 1]
        d1 = _kernel_derivs(omega[s], c)[order - 1]
        out[s] = w[s] * _prefactor(prof, radio) * (dz - d1)
    return out


def surrogate_gradient(omega, p_nr, p_ne, profiles: Sequence[MiotSliceProfile],
                       radio: RadioParams, weights=None):
    """Per-slice derivative of the (weighted) success probability.

    Parameters
    ----------
    omega : array_like
        Bandwidth per slice in MHz.
    p_nr : float
        Access probability.
    p_ne : float or array_like
        Non-empty probability per slice.
    profiles : sequence of MiotSliceProfile
    radio : RadioParams
    weights : array_like, optional
        Slice weights; ``lambda_s / sum(lambda)`` reproduces the utility
        gradient.  Defaults to ones.

    Returns
    -------
    ndarray
    """
    return _derivative(1, omega, profiles, radio, p_nr, p_ne, weights)


def surrogate_hessian(omega, p_nr, p_ne, profiles, radio, weights=None, full=False):
    """Second derivatives; the Hessian is diagonal across slices.

    With ``full=True`` the square matrix is returned instead of its diagonal.
    """
    d = _derivative(2, omega, profiles, radio, p_nr, p_ne, weights)
    return np.diag(d) if full else d


def surrogate_third(omega, p_nr, p_ne, profiles, radio, weights=None):
    """Third derivatives per slice."""
    return _derivative(3, omega, profiles, radio, p_nr, p_ne, weights)


@dataclass(frozen=True)
class TrustInterval:
    """Per-slice bandwidth bounds in MHz.

    ``omega_lb_hat`` is the lower zero of ``P - pi`` clipped at ``a``,
    ``s_star`` the maximizer of ``P`` and ``omega_ub`` the upper zero, clipped
    at ``W``.
    """

    omega_lb_hat: float
    s_star: float
    omega_ub: float
    p_max: float


def _bisect(fn, lo, hi, tol):
    """Root of ``fn`` on ``[lo, hi]`` given ``fn(lo) > 0 >= fn(hi)`` or the reverse.

    The orientation is read at ``hi`` so that a root sitting exactly at
    ``lo`` is still bracketed correctly.
    """
    flo = not fn(hi) > 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if (fn(mid) > 0) == flo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_trust_interval(profile: MiotSliceProfile, radio: RadioParams, p_nr, p_ne,
                        pi_s, a, W, tol=1e-6, mode="closed") -> TrustInterval:
    """Bracket the bandwidths meeting the QoS floor and locate the peak.

    The peak ``S*`` is found by bisection on the sign of the derivative
    (the curve is unimodal); the two zeros of ``P - pi`` by bisection on
    either side of it.

    Raises
    ------
    SliceInfeasibleError
        If the largest achievable probability is below ``pi_s``.
    """
    if W < a:
        raise InvalidParameterError("W must be at least a")

    def P(w):
        return success_curve(w, profile, radio, p_nr, p_ne, mode)

    def dP(w):
        return surrogate_gradient([w], p_nr, [p_ne], [profile], radio)[0]

    if dP(a) <= 0:
        s_star = a
    elif dP(W) >= 0:
        s_star = W
    else:
        s_star = _bisect(dP, a, W, tol)
    p_max = P(s_star)
    if p_max < pi_s:
        raise SliceInfeasibleError(profile.slice_id, p_max, pi_s)

    def Q(w):
        return P(w) - pi_s

    lb = a if Q(a) >= 0 else _bisect(lambda w: -Q(w), a, s_star, tol)
    ub = W if Q(W) >= 0 else _bisect(Q, s_star, W, tol)
    lb = min(max(lb, a), s_star)
    ub = max(min(ub, W), s_star)
    return TrustInterval(lb, s_star, ub, p_max)


@dataclass(frozen=True)
class TaylorSurrogate:
    """Second-order model of the weighted success probability.

    Attributes
    ----------
    local_point : ndarray
    value : ndarray
        Weighted probability per slice at the local point.
    gradient, hessian_diag : ndarray
    third_lb, third_star : ndarray
        Third derivatives at the interval endpoints (remainder rule).
    intervals : tuple of TrustInterval
    """

    local_point: np.ndarray
    value: np.ndarray
    gradient: np.ndarray
    hessian_diag: np.ndarray
    third_lb: np.ndarray
    third_star: np.ndarray
    intervals: tuple

    def concave_hessian(self):
        """Hessian clipped to be non-positive so the model stays concave."""
        return np.minimum(self.hessian_diag, 0.0)

    def model(self, omega, concave=True):
        d = np.asarray(omega, dtype=float) - self.local_point
        h = self.concave_hessian() if concave else self.hessian_diag
        return float(np.sum(self.value + self.gradient * d + 0.5 * h * d * d))

    def remainder_bound(self, omega):
        return taylor_remainder_bound(self, omega)


def taylor_remainder_bound(surrogate: TaylorSurrogate, omega):
    """Third-order remainder estimate with the endpoint-max rule.

    Returns ``sum_s |omega_s - omega0_s|^3 / 6 * max(|P'''(lb_s)|, |P'''(S*_s)|)``.
    """
    d = np.abs(np.asarray(omega, dtype=float) - surrogate.local_point)
    m = np.maximum(np.abs(surrogate.third_lb), np.abs(surrogate.third_star))
    return float(np.sum(d**3 * m) / 6.0)


def build_surrogate(omega0, profiles, radio, p_nr, p_ne, intervals, weights=None):
    """Expand the weighted success probability at ``omega0``.

    The expansion point is clamped into ``[omega_lb_hat, S*]`` per slice;
    clamping is logged at debug level.
    """
    omega0 = np.asarray(omega0, dtype=float).copy()
    lo = np.array([iv.omega_lb_hat for iv in intervals])
    hi = np.array([iv.s_star for iv in intervals])
    clamped = np.clip(omega0, lo, hi)
    if np.any(clamped != omega0):
        log.debug("surrogate expansion point clamped from %s to %s", omega0, clamped)
    w = np.ones(len(profiles)) if weights is None else np.asarray(weights, dtype=float)
    p_ne = np.broadcast_to(np.asarray(p_ne, dtype=float), clamped.shape)
    val = np.array([w[s] * success_curve(clamped[s], prof, radio, p_nr, p_ne[s])
                    for s, prof in enumerate(profiles)])
    return TaylorSurrogate(
        local_point=clamped,
        value=val,
        gradient=surrogate_gradient(clamped, p_nr, p_ne, profiles, radio, w),
        hessian_diag=surrogate_hessian(clamped, p_nr, p_ne, profiles, radio, w),
        third_lb=surrogate_third(lo, p_nr, p_ne, profiles, radio, w),
        third_star=surrogate_third(hi, p_nr, p_ne, profiles, radio, w),
        intervals=tuple(intervals),
    )


def operating_nonempty(profiles: Sequence[MiotSliceProfile], radio: RadioParams,
                       ctrl: AccessControl, T, W, ps_init="noise", mode="closed",
                       tol=1e-6):
    """Self-consistent non-empty probability per slice.

    For a candidate value ``p`` the peak bandwidth ``S*(p)`` is computed and
    the slot is evolved there; the time-average non-empty probability of
    that trajectory is compared with ``p``.  Bisection on the difference
    returns a fixed point (or the jump location if the map is discontinuous).

    Returns
    -------
    ndarray
        One probability per slice.
    """
    p_nr = access_probability(ctrl)
    out = np.zeros(len(profiles))
    for s, prof in enumerate(profiles):
        def peak(p):
            iv = find_trust_interval(prof, radio, p_nr, p, 0.0, radio.a, W, tol, mode)
            return iv.s_star

        def gap(p):
            traj = evolve_slot([prof], radio, ctrl, [peak(p)], T, ps_init, mode)
            return float(np.mean(traj.p_ne[:, 0])) - p

        lo, hi = 1e-6, 1.0
        if gap(hi) >= 0:
            out[s] = hi
            continue
        if gap(lo) <= 0:
            out[s] = lo
            continue
        out[s] = _bisect(gap, lo, hi, 1e-7)
    return out
