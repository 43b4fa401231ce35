"""Closed-form random-access analysis for mIoT slices.

Under truncated channel-inversion power control every active device is
received at power ``rho_o``; interference comes only from devices of the
same cell that picked the same preamble on the same PRACH.  The number of
such devices follows a gamma-mixed Poisson law, which gives the success
probability in closed form.  Queues are tracked by their mean intensity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .config import AccessControl, MiotSliceProfile, RadioParams
from .errors import (ConstraintViolationError, InternalConsistencyError,
                     InvalidParameterError)

SHAPE = 3.5  # gamma shape of the Voronoi cell-area approximation
PMF_TAIL = 1e-12
PMF_CAP = 100_000


def access_probability(ctrl: AccessControl) -> float:
    """Probability that an active device is not barred."""
    return 1.0 if ctrl.scheme == "unrestricted" else float(ctrl.p_acb)


def alpha_load(p_nr, p_ne, lambda_I, lambda_R, xi, F_s):
    """Normalized interferer load per preamble and PRACH.

    Parameters
    ----------
    p_nr, p_ne : float or ndarray
        Access and non-empty probabilities.
    lambda_I, lambda_R : float
        Device and RRH intensities.
    xi : float
        Number of preambles.
    F_s : float or ndarray
        Number of PRACHs (continuous relaxation allowed).

    Returns
    -------
    float or ndarray
    """
    F_s = np.asarray(F_s, dtype=float)
    if lambda_R <= 0 or xi <= 0 or np.any(F_s <= 0):
        raise InvalidParameterError("lambda_R, xi and F_s must be positive")
    if np.any(np.asarray(p_nr) < 0) or np.any(np.asarray(p_ne) < 0) or lambda_I < 0:
        raise InvalidParameterError("probabilities and intensities must be >= 0")
    out = np.asarray(p_nr, dtype=float) * np.asarray(p_ne, dtype=float) * lambda_I / (
        SHAPE * lambda_R * xi * F_s)
    return float(out) if out.ndim == 0 else out


def gamma_poisson_pmf(n_prime, alpha_s):
    """PMF of the number of co-channel active devices in a cell.

    Parameters
    ----------
    n_prime : int or array of int
    alpha_s : float
        Load from :func:`alpha_load`.

    Returns
    -------
    float or ndarray
    """
    n = np.asarray(n_prime, dtype=float)
    if np.any(n < 0) or alpha_s < 0:
        raise InvalidParameterError("n' and alpha must be non-negative")
    if alpha_s == 0.0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        logp = (SHAPE * np.log(SHAPE) + gammaln(n + SHAPE) + n * np.log(SHAPE * alpha_s)
                - gammaln(SHAPE) - gammaln(n + 1.0)
                - (n + SHAPE) * np.log(SHAPE * alpha_s + SHAPE))
        out = np.exp(logp)
    return float(out) if out.ndim == 0 else out


def pmf_support(alpha_s, tail=PMF_TAIL, cap=PMF_CAP):
    """PMF values over an adaptively chosen support ``0..N_cut``.

    Terms are added until the remaining tail mass drops below ``tail`` or
    ``cap`` terms have been generated.
    """
    if alpha_s == 0.0:
        return np.array([1.0])
    size = 64
    while True:
        p = gamma_poisson_pmf(np.arange(size), alpha_s)
        acc = np.cumsum(p)
        hit = np.nonzero(1.0 - acc < tail)[0]
        if hit.size:
            return p[: hit[0] + 1]
        if size >= cap:
            return p[:cap]
        size = min(4 * size, cap)


def interference_laplace(varpi, alpha_s, rho_o, mode="closed"):
    """Laplace transform of the received intra-cell interference.

    Parameters
    ----------
    varpi : float or ndarray
        Transform argument, 1/W.
    alpha_s : float or ndarray
        Load.
    rho_o : float
        Power-control cutoff, W.
    mode : {"closed", "physical"}
        ``"physical"`` returns 1 for a load below 1e-12 instead of the
        closed form value 0.

    Returns
    -------
    float or ndarray
    """
    varpi = np.asarray(varpi, dtype=float)
    alpha = np.asarray(alpha_s, dtype=float)
    if np.any(varpi < 0) or np.any(alpha < 0) or rho_o <= 0:
        raise InvalidParameterError("varpi, alpha >= 0 and rho_o > 0 required")
    u = varpi * rho_o
    val = (1.0 + u) * ((1.0 + alpha * u / (1.0 + u)) ** -SHAPE - (1.0 + alpha) ** -SHAPE)
    if mode == "physical":
        val = np.where(alpha < 1e-12, 1.0, val)
    elif mode != "closed":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    val = np.maximum(val, 0.0)
    return float(val) if val.ndim == 0 else val


def ra_success_probability(theta_th, rho_o, sigma2, alpha_s, mode="closed"):
    """Random-access success probability of an active device.

    Returns ``exp(-varpi sigma2) * L(varpi)`` with ``varpi = theta / rho_o``.

    Raises
    ------
    InternalConsistencyError
        If the value leaves [0, 1] by more than 1e-9.
    """
    if theta_th < 0 or rho_o <= 0 or sigma2 < 0:
        raise InvalidParameterError("theta >= 0, rho_o > 0, sigma2 >= 0 required")
    varpi = theta_th / rho_o
    p = np.exp(-varpi * sigma2) * interference_laplace(varpi, alpha_s, rho_o, mode)
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-9) or np.any(p > 1 + 1e-9):
        raise InternalConsistencyError(f"success probability {p} outside [0, 1]")
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def packets_per_success(a, theta_th, L_bits, minislot_s=1.0):
    """Packets removed from the head of a queue by one successful access.

    Parameters
    ----------
    a : float
        PRACH tone spacing in MHz.
    theta_th : float
    L_bits : float
    minislot_s : float

    Returns
    -------
    float
        ``a * minislot * log2(1 + theta) / L``, possibly fractional.
    """
    if a <= 0 or L_bits <= 0:
        raise InvalidParameterError("a and L must be positive")
    return float(a * 1e6 * minislot_s * np.log2(1.0 + theta_th) / L_bits)


def queue_step(theta_w_prev, theta_a_prev, p_s_prev, x_s):
    """One-minislot update of the accumulated-packet intensity."""
    tot = np.asarray(theta_w_prev, dtype=float) + np.asarray(theta_a_prev, dtype=float)
    out = np.maximum(0.0, tot - x_s * np.asarray(p_s_prev, dtype=float) * (-np.expm1(-tot)))
    return float(out) if out.ndim == 0 else out


def nonempty_probability(theta_a):
    """Probability that a device queue holds at least one packet."""
    out = -np.expm1(-np.asarray(theta_a, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QueueTrajectory:
    """Per-minislot queue and access statistics, arrays of shape ``(T, S)``."""

    theta_a: np.ndarray
    p_ne: np.ndarray
    p_s: np.ndarray

    @property
    def T(self):
        return self.theta_a.shape[0]


def initial_success(theta_th, radio: RadioParams, ps_init="noise"):
    """Success probability used at the first minislot."""
    if ps_init == "noise":
        return float(np.exp(-theta_th * radio.sigma2 / radio.rho_o))
    if ps_init == "one":
        return 1.0
    if ps_init == "zero":
        return 0.0
    raise InvalidParameterError(f"unknown ps_init {ps_init!r}")


def evolve_slot(profiles: Sequence[MiotSliceProfile], radio: RadioParams,
                ctrl: AccessControl, omega_s, T: int, ps_init="noise",
                mode="closed") -> QueueTrajectory:
    """Deterministic queue and success-probability evolution over a slot.

    Parameters
    ----------
    profiles : sequence of MiotSliceProfile
    radio : RadioParams
    ctrl : AccessControl
    omega_s : array_like
        Bandwidth per slice in MHz; each entry must be at least ``radio.a``.
    T : int
        Number of minislots.
    ps_init : {"noise", "one", "zero"}
        Success probability at the first minislot.
    mode : {"closed", "physical"}
        Laplace-transform mode.

    Returns
    -------
    QueueTrajectory
    """
    omega = np.atleast_1d(np.asarray(omega_s, dtype=float))
    S = len(profiles)
    if omega.shape != (S,):
        raise InvalidParameterError(f"need {S} bandwidth values, got {omega.shape}")
    if np.any(omega < radio.a * (1 - 1e-12)):
        raise ConstraintViolationError("every slice needs at least one PRACH (omega >= a)")
    if T < 1:
        raise InvalidParameterError("T must be >= 1")
    p_nr = access_probability(ctrl)
    ta = np.zeros((T, S))
    pne = np.zeros((T, S))
    ps = np.zeros((T, S))
    F = omega / radio.a
    for s, prof in enumerate(profiles):
        arr = prof.arrivals(T)
        x = packets_per_success(radio.a, prof.theta_th, radio.L_bits, radio.minislot_s)
        ps[0, s] = initial_success(prof.theta_th, radio, ps_init)
        for t in range(1, T):
            ta[t, s] = queue_step(arr[t - 1], ta[t - 1, s], ps[t - 1, s], x)
            pne[t, s] = nonempty_probability(ta[t, s])
            al = alpha_load(p_nr, pne[t, s], prof.lambda_I, radio.lambda_R, radio.xi, F[s])
            ps[t, s] = ra_success_probability(prof.theta_th, radio.rho_o, radio.sigma2, al, mode)
    return QueueTrajectory(ta, pne, ps)


def miot_utility(traj: QueueTrajectory, profiles: Sequence[MiotSliceProfile]) -> float:
    """Intensity-weighted time average of the success probabilities."""
    lam = np.array([p.lambda_I for p in profiles], dtype=float)
    if traj.p_s.shape[1] != lam.size:
        raise InvalidParameterError("trajectory and profiles disagree on slice count")
    return float(np.mean(traj.p_s @ lam) / lam.sum())
