"""Finite-blocklength resource formulas for bursty URLLC slices.

Units: latency ``D`` in seconds, ``kappa`` in channel uses per second per
Hz, arrival rates per minislot converted to per second with the minislot
duration held in :class:`~ranslice.config.UrllcGlobals`.  Bandwidths are
returned in MHz and powers in watts.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .config import UrllcGlobals, UrllcSliceProfile
from .errors import InfeasibleRateError, InvalidParameterError

LN2 = np.log(2.0)


@lru_cache(maxsize=64)
def _q_inverse_scalar(beta: float) -> float:
    if not 0 < beta < 1:
        raise InvalidParameterError("beta must lie in (0, 1)")
    return float(-ndtri(beta))


def q_inverse(beta):
    """Inverse of the Gaussian tail function, ``Q^{-1}(beta)``."""
    if isinstance(beta, (float, int)):
        return _q_inverse_scalar(float(beta))
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0) or np.any(beta >= 1):
        raise InvalidParameterError("beta must lie in (0, 1)")
    out = -ndtri(beta)
    return float(out) if out.ndim == 0 else out


def snr(H, G, ugl: UrllcGlobals):
    """Received SNR ``tr(H G) / (phi sigma2)``.

    Parameters
    ----------
    H, G : ndarray
        Hermitian matrices of equal shape.
    ugl : UrllcGlobals
    """
    H = np.asarray(H)
    G = np.asarray(G)
    if H.shape != G.shape or H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidParameterError(f"dimension mismatch {H.shape} vs {G.shape}")
    return float(np.real(np.trace(H @ G))) / (ugl.phi_snr * ugl.sigma2_u)


def channel_uses(L_bits_u, snr_lin, beta_decode):
    """Channel uses needed to deliver ``L`` bits at error rate ``beta``.

    Parameters
    ----------
    L_bits_u : float or ndarray
    snr_lin : float or ndarray
        Linear SNR, strictly positive.
    beta_decode : float
        Codeword error probability in (0, 0.5].

    Returns
    -------
    float or ndarray
    """
    s = np.asarray(snr_lin, dtype=float)
    if np.any(s <= 0):
        raise InfeasibleRateError("SNR must be positive to carry a payload")
    if not 0 < beta_decode <= 0.5:
        raise InvalidParameterError("beta must lie in (0, 0.5]")
    L = np.asarray(L_bits_u, dtype=float)
    C = np.log1p(s) / LN2
    q = q_inverse(beta_decode) if beta_decode < 0.5 else 0.0
    if q == 0.0:
        out = L / C
    else:
        half = q * q / (2.0 * C * C)
        out = L / C + half + half * np.sqrt(1.0 + 4.0 * L * C / (q * q))
    return float(out) if np.ndim(out) == 0 else out


def channel_uses_derivative(L_bits_u, snr_lin, beta_decode):
    """Derivative of :func:`channel_uses` with respect to the SNR."""
    s = np.asarray(snr_lin, dtype=float)
    L = np.asarray(L_bits_u, dtype=float)
    C = np.log1p(s) / LN2
    dC = 1.0 / ((1.0 + s) * LN2)
    q2 = q_inverse(beta_decode) ** 2 if beta_decode < 0.5 else 0.0
    if q2 == 0.0:
        d = -L / C**2
    else:
        root = np.sqrt(1.0 + 4.0 * L * C / q2)
        d = -L / C**2 - q2 / C**3 * (1.0 + root) + q2 / (2.0 * C**2) * (2.0 * L / q2) / root
    out = d * dC
    return float(out) if np.ndim(out) == 0 else out


def channel_uses_second_derivative(L_bits_u, snr_lin, beta_decode):
    """Second derivative of :func:`channel_uses` with respect to the SNR.

    Uses ``r(C) = L/C + A/(2C^2) + sqrt(A^2/(4C^4) + A L/C^3)`` with
    ``A = Q^{-1}(beta)^2`` and ``C = log2(1 + snr)``.
    """
    s = np.asarray(snr_lin, dtype=float)
    L = np.asarray(L_bits_u, dtype=float)
    C = np.log1p(s) / LN2
    A = q_inverse(beta_decode) ** 2 if beta_decode < 0.5 else 0.0
    dC = 1.0 / ((1.0 + s) * LN2)
    d2C = -1.0 / ((1.0 + s) ** 2 * LN2)
    r_c = -L / C**2
    r_cc = 2.0 * L / C**3
    if A > 0:
        R = np.sqrt(A * A / (4.0 * C**4) + A * L / C**3)
        Nq = -A * A / C**5 - 3.0 * A * L / C**4
        Nq1 = 5.0 * A * A / C**6 + 12.0 * A * L / C**5
        r_c = r_c - A / C**3 + Nq / (2.0 * R)
        r_cc = r_cc + 3.0 * A / C**4 + Nq1 / (2.0 * R) - Nq**2 / (4.0 * R**3)
    out = r_cc * dC**2 + r_c * d2C
    return float(out) if np.ndim(out) == 0 else out


def normal_approx_bits(r, snr_lin, beta_decode):
    """Bits deliverable in ``r`` channel uses under the normal approximation."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise InvalidParameterError("r must be positive")
    s = np.asarray(snr_lin, dtype=float)
    C = np.log1p(s) / LN2
    V = LN2**2 * (1.0 - (1.0 + s) ** -2.0)
    q = q_inverse(beta_decode) if beta_decode < 0.5 else 0.0
    out = r * C - q * np.sqrt(r * V)
    return float(out) if np.ndim(out) == 0 else out


def per_second(lambda_s, ugl: UrllcGlobals):
    """Arrival rate per second from a per-minislot rate."""
    return np.asarray(lambda_s, dtype=float) / ugl.minislot_s


def per_packet_bandwidth(b, r, kappa, D_s):
    """Bandwidth in MHz that serves one packet within its latency bound."""
    D_s = np.asarray(D_s, dtype=float)
    if np.any(D_s <= 0) or np.any(np.asarray(r) < 0):
        raise InvalidParameterError("D must be positive and r non-negative")
    out = np.asarray(b, dtype=float) * np.asarray(r, dtype=float) / (kappa * D_s) * 1e-6
    return float(out) if out.ndim == 0 else out


def bound_coefficient(ugl: UrllcGlobals):
    """Coefficient ``(alpha - varsigma alpha) / (varsigma - alpha)``."""
    a, v = ugl.alpha_block, ugl.varsigma
    if v <= a:
        raise InvalidParameterError("varsigma must exceed alpha")
    return (a - v * a) / (v - a)


def device_loads(profiles: Sequence[UrllcSliceProfile], ugl: UrllcGlobals):
    """Per-device offered load ``lambda * D`` (arrivals per latency window).

    Devices are ordered slice by slice.
    """
    out = []
    for p in profiles:
        out.extend([float(per_second(p.lambda_s, ugl)) * p.D_s] * p.device_count)
    return np.array(out)


def device_attr(profiles: Sequence[UrllcSliceProfile], name):
    """Per-device copy of a slice attribute, ordered slice by slice."""
    out = []
    for p in profiles:
        out.extend([getattr(p, name)] * p.device_count)
    return np.array(out, dtype=float)


def urllc_bandwidth_bound(b, r, profiles: Sequence[UrllcSliceProfile], ugl: UrllcGlobals):
    """Upper bound on the bandwidth needed by the served URLLC devices.

    Parameters
    ----------
    b : array_like of {0, 1}
        Served flags, one per device ordered slice by slice.
    r : array_like
        Channel uses per packet, one per device (ignored where ``b = 0``).
    profiles : sequence of UrllcSliceProfile
    ugl : UrllcGlobals

    Returns
    -------
    float
        Bandwidth in MHz; 0 when no device is served.
    """
    coeff = bound_coefficient(ugl)
    b = np.asarray(b, dtype=float)
    r = np.where(b > 0, np.asarray(r, dtype=float), 0.0)
    e = device_loads(profiles, ugl)
    D = device_attr(profiles, "D_s")
    if b.shape != e.shape or r.shape != e.shape:
        raise InvalidParameterError("flags and channel uses must have one entry per device")
    if not np.any(b > 0):
        return 0.0
    om = per_packet_bandwidth(b, r, ugl.kappa, D)
    # devices without traffic add nothing to either term
    on = (b > 0) & (e > 0)
    if not on.any():
        return 0.0
    lin = float(np.sum(e * om))
    quad = float(np.sum(b * e**2)) * float(np.sum(e * om**2)) / float(np.min(e[on]))
    return lin + coeff * np.sqrt(quad)


def urllc_utility(b, D_s, traces, eta):
    """Energy-efficiency utility of the URLLC slices.

    Parameters
    ----------
    b : array_like
        Served flags per device.
    D_s : array_like
        Latency bound per device in seconds.
    traces : array_like
        ``tr(G)`` per device in watts.
    eta : float

    Returns
    -------
    float
    """
    b = np.asarray(b, dtype=float)
    gain = 1.0 / (-np.expm1(-np.asarray(D_s, dtype=float)))
    return float(np.sum(b * gain) - eta * np.sum(b * np.asarray(traces, dtype=float)))


def device_gain(D_s):
    """Latency reward ``1 / (1 - exp(-D))`` of serving one device."""
    return 1.0 / (-np.expm1(-np.asarray(D_s, dtype=float)))
