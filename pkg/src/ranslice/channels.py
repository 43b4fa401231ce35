"""URLLC channel samples: path loss, log-normal shadowing, Rayleigh fading."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import InvalidParameterError

MIN_DISTANCE_KM = 0.01  # keeps the log-distance model away from its singularity

# independent random streams derived from one seed
STREAM_LAYOUT = 0
STREAM_SAMPLES = 1
STREAM_SENSED = 2
STREAM_MC = 3


def rng_for(seed, stream, *extra):
    """Generator for a named stream of a seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), *map(int, extra)]))


def path_loss_db(d_km):
    """Path loss ``128.1 + 37.6 log10(d)`` with ``d`` in km."""
    d = np.maximum(np.asarray(d_km, dtype=float), MIN_DISTANCE_KM)
    return 128.1 + 37.6 * np.log10(d)


@dataclass(frozen=True)
class Layout:
    """RRH and URLLC device positions in km."""

    rrh: np.ndarray
    devices: np.ndarray

    def distances(self):
        return np.linalg.norm(self.devices[:, None, :] - self.rrh[None, :, :], axis=2)


def make_layout(cfg: SystemConfig, seed) -> Layout:
    """Uniform placement of ``J`` RRHs and all URLLC devices in a square."""
    side = np.sqrt(cfg.area_km)
    rng = rng_for(seed, STREAM_LAYOUT)
    return Layout(rrh=rng.uniform(0.0, side, (cfg.J, 2)),
                  devices=rng.uniform(0.0, side, (cfg.n_urllc_devices, 2)))


def mean_gain(cfg: SystemConfig, layout: Layout):
    """Large-scale gain per (device, RRH) without shadowing, linear."""
    return 10.0 ** ((cfg.antenna_gain_db - path_loss_db(layout.distances())) / 10.0)


def draw_channels(cfg: SystemConfig, layout: Layout, rng):
    """One channel realization, shape ``(N_u, J*K)`` complex.

    Every (device, RRH) pair gets an independent shadowing draw; every
    antenna an independent ``CN(0, 1)`` fading coefficient.
    """
    base = mean_gain(cfg, layout)
    n, J, K = base.shape[0], cfg.J, cfg.K
    shadow = 10.0 ** (rng.normal(0.0, cfg.shadowing_db, (n, J)) / 10.0)
    amp = np.sqrt(base * shadow)
    fad = (rng.standard_normal((n, J, K)) + 1j * rng.standard_normal((n, J, K))) / np.sqrt(2.0)
    return (amp[:, :, None] * fad).reshape(n, J * K)


@dataclass(frozen=True)
class ChannelSampleSet:
    """``M`` channel realizations for SAA, array of shape ``(M, N_u, J*K)``."""

    layout: Layout
    h: np.ndarray

    @property
    def M(self):
        return self.h.shape[0]

    def matrices(self, m, i):
        """Rank-one channel matrix ``h h^H`` of device ``i`` in sample ``m``."""
        v = self.h[m, i]
        return np.outer(v, v.conj())


def generate_channel_samples(cfg: SystemConfig, M, seed, layout: Layout | None = None,
                             stream=STREAM_SAMPLES) -> ChannelSampleSet:
    """Draw ``M`` i.i.d. channel samples for a fixed device layout.

    Parameters
    ----------
    cfg : SystemConfig
    M : int
    seed : int
    layout : Layout, optional
        Defaults to the layout of ``cfg.algo.layout_seed`` (or ``seed``).
    stream : int
        Random stream; sensed minislot channels use a separate stream.

    Returns
    -------
    ChannelSampleSet
    """
    if M < 1:
        raise InvalidParameterError("M must be >= 1")
    if layout is None:
        ls = cfg.algo.layout_seed if cfg.algo.layout_seed is not None else seed
        layout = make_layout(cfg, ls)
    rng = rng_for(seed, stream)
    h = np.stack([draw_channels(cfg, layout, rng) for _ in range(M)])
    return ChannelSampleSet(layout=layout, h=h)


def analytic_mean_trace(cfg: SystemConfig, layout: Layout):
    """``E[tr(h h^H)]`` per device under log-normal shadowing."""
    s = cfg.shadowing_db * np.log(10.0) / 10.0
    return mean_gain(cfg, layout).sum(axis=1) * cfg.K * np.exp(0.5 * s * s)
