"""Finite-blocklength formulas and the URLLC bandwidth bound."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from ranslice.config import UrllcGlobals, UrllcSliceProfile
from ranslice.errors import InfeasibleRateError, InvalidParameterError
from ranslice.urllc import (bound_coefficient, channel_uses, channel_uses_derivative,
                            channel_uses_second_derivative, device_gain, normal_approx_bits,
                            per_packet_bandwidth, q_inverse, snr, urllc_bandwidth_bound,
                            urllc_utility)

UGL = UrllcGlobals()
BETA = 2e-8


def _cplx(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_snr_examples(rng):
    H = np.outer(*(2 * [_cplx(rng, 4)]))
    assert snr(H, np.zeros((4, 4)), UGL) == 0.0
    h = _cplx(rng, 4)
    h /= np.linalg.norm(h)
    p = 0.3
    G = p * np.outer(h, h.conj())
    assert snr(np.outer(h, h.conj()), G, UGL) == pytest.approx(p / (UGL.phi_snr * UGL.sigma2_u))
    with pytest.raises(InvalidParameterError):
        snr(np.eye(3), np.eye(4), UGL)


def test_snr_trace_form_matches_inner_product(rng):
    for _ in range(20):
        h, g = _cplx(rng, 6), _cplx(rng, 6)
        val = snr(np.outer(h, h.conj()), np.outer(g, g.conj()), UGL)
        ref = abs(np.vdot(h, g)) ** 2 / (UGL.phi_snr * UGL.sigma2_u)
        assert val == pytest.approx(ref, rel=1e-10)


def test_channel_uses_limits():
    s = 7.0
    C = math.log2(1 + s)
    q = q_inverse(BETA)
    assert channel_uses(0.0, s, BETA) == pytest.approx(q * q / C**2)
    assert channel_uses(160.0, s, 0.5) == pytest.approx(160.0 / C)
    with pytest.raises(InfeasibleRateError):
        channel_uses(160.0, 0.0, BETA)


@pytest.mark.parametrize("s", [0.05, 1.0, 30.0, 1e4])
def test_channel_uses_root_of_bound(s):
    # closed form is the root of r C - q sqrt(r) = L, found here by bracketing
    C, q, L = math.log2(1 + s), q_inverse(BETA), 160.0
    r_ref = brentq(lambda r: r * C - q * math.sqrt(r) - L, 1e-9, 1e9, xtol=1e-12, rtol=1e-14)
    assert channel_uses(L, s, BETA) == pytest.approx(r_ref, rel=1e-10)


@given(st.floats(1e-3, 1e5), st.floats(1.0, 2000.0))
@settings(max_examples=60)
def test_normal_approx_covers_payload(s, L):
    r = channel_uses(L, s, BETA)
    assert normal_approx_bits(r, s, BETA) >= L * (1 - 1e-12)


def test_normal_approx_limits():
    r = 300.0
    assert normal_approx_bits(r, 1.0, 0.5) == pytest.approx(r)
    big = normal_approx_bits(r, 1e12, BETA)
    C = math.log2(1 + 1e12)
    assert big == pytest.approx(r * C - q_inverse(BETA) * math.sqrt(r * math.log(2) ** 2), rel=1e-9)


@pytest.mark.parametrize("s", [0.2, 3.0, 50.0, 800.0])
def test_channel_use_derivatives(s):
    h = 1e-5 * s
    f = lambda x: channel_uses(160.0, x, BETA)
    d1 = (f(s + h) - f(s - h)) / (2 * h)
    d2 = (f(s + h) - 2 * f(s) + f(s - h)) / h**2
    assert channel_uses_derivative(160.0, s, BETA) == pytest.approx(d1, rel=1e-6)
    g = lambda x: channel_uses_derivative(160.0, x, BETA)
    assert channel_uses_second_derivative(160.0, s, BETA) == pytest.approx(
        (g(s + h) - g(s - h)) / (2 * h), rel=1e-6)
    assert channel_uses_second_derivative(160.0, s, BETA) == pytest.approx(d2, rel=1e-3)


def test_per_packet_bandwidth_example():
    assert per_packet_bandwidth(0, 100.0, 5.12e-4, 1e-3) == 0.0
    # 100 channel uses within 1 ms at 5.12e-4 uses/s/Hz, reported in MHz
    assert per_packet_bandwidth(1, 100.0, 5.12e-4, 1e-3) == pytest.approx(195.3125)


def test_bound_coefficient():
    assert bound_coefficient(UGL) == pytest.approx(1e-5 * (1 - 2e-5) / 1e-5)
    assert bound_coefficient(UGL) == pytest.approx(0.99998)


PROFILES = (UrllcSliceProfile(0, 3, 1e-3, 0.1), UrllcSliceProfile(1, 5, 2e-3, 0.1))


def test_bandwidth_bound_empty_and_single():
    r = np.full(8, 120.0)
    assert urllc_bandwidth_bound(np.zeros(8), r, PROFILES, UGL) == 0.0
    b = np.zeros(8)
    b[4] = 1
    e = 0.1 * 2e-3
    om = 120.0 / (UGL.kappa * 2e-3) * 1e-6
    assert urllc_bandwidth_bound(b, r, PROFILES, UGL) == pytest.approx(
        e * om * (1 + bound_coefficient(UGL)), rel=1e-12)


def test_bandwidth_bound_direct_formula(rng):
    b = (rng.random(8) < 0.6).astype(float)
    b[0] = 1
    r = rng.uniform(50, 300, 8)
    lam = np.array([0.1] * 8)
    D = np.array([1e-3] * 3 + [2e-3] * 5)
    e = lam * D
    k = UGL.kappa
    lin = np.sum(e * b * r / (k * D)) * 1e-6
    quad = np.sum(b * e**2) * np.sum(e * (b * r / (k * D) * 1e-6) ** 2) / np.min(e[b > 0])
    assert urllc_bandwidth_bound(b, r, PROFILES, UGL) == pytest.approx(
        lin + bound_coefficient(UGL) * math.sqrt(quad), rel=1e-12)


@given(st.lists(st.booleans(), min_size=8, max_size=8), st.integers(0, 7),
       st.lists(st.floats(1.0, 500.0), min_size=8, max_size=8))
def test_bandwidth_bound_monotone(flags, flip, r):
    b = np.array(flags, dtype=float)
    b[flip] = 0
    w0 = urllc_bandwidth_bound(b, r, PROFILES, UGL)
    b[flip] = 1
    assert urllc_bandwidth_bound(b, r, PROFILES, UGL) >= w0 - 1e-12 * max(1.0, w0)


def test_utility_examples():
    assert urllc_utility(np.zeros(3), [1e-3] * 3, [0.1] * 3, 100.0) == 0.0
    assert urllc_utility([1], [1e6], [0.002], 100.0) == pytest.approx(1 - 100 * 0.002)
    D = np.array([1e-3, 2e-3])
    assert urllc_utility([1, 1], D, [5.0, 5.0], 0.0) == pytest.approx(
        np.sum(1 / (1 - np.exp(-D))))
    assert device_gain(1e-3) == pytest.approx(1000.5, abs=1e-3)
