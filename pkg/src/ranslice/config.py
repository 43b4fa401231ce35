"""Configuration types, defaults and the JSON boundary.

All quantities are stored in internal units once parsed: powers in watts,
bandwidth in MHz, latency in seconds, rates per minislot.  Decibel and
millisecond inputs are converted exactly once, in :func:`parse_config`.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, InvalidParameterError


def dbm_to_watt(dbm):
    """Convert dBm to watts."""
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(db):
    """Convert a power ratio in dB to linear scale."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def theta_from_rate(gamma_kbits, a_mhz, minislot_s=1.0):
    """SINR threshold implied by a queue serving rate.

    The serving rate is the payload one PRACH tone carries per minislot,
    ``gamma = a * minislot * log2(1 + theta)``.

    Parameters
    ----------
    gamma_kbits : float
        Serving rate in Kbits per minislot.
    a_mhz : float
        PRACH tone spacing in MHz.
    minislot_s : float
        Minislot duration in seconds.

    Returns
    -------
    float
        Linear threshold theta.
    """
    if a_mhz <= 0 or minislot_s <= 0:
        raise InvalidParameterError("a and minislot must be positive")
    return float(2.0 ** (gamma_kbits * 1e3 / (a_mhz * 1e6 * minislot_s)) - 1.0)


@dataclass(frozen=True)
class MiotSliceProfile:
    """Traffic and QoS description of one mIoT slice.

    Parameters
    ----------
    slice_id : int
    lambda_I : float
        Device intensity in devices/km^2.
    theta_th : float
        Linear SINR decoding threshold.
    arrival_intensity : float or tuple of float
        Mean packet arrivals per device per minislot, constant or per minislot.
    pi_s : float
        Minimum random-access success probability.
    """

    slice_id: int
    lambda_I: float
    theta_th: float
    arrival_intensity: float | tuple = 0.0
    pi_s: float = 0.0

    def __post_init__(self):
        if not self.lambda_I > 0:
            raise InvalidParameterError("lambda_I must be positive")
        if not self.theta_th > 0:
            raise InvalidParameterError("theta_th must be positive")
        if not 0.0 <= self.pi_s <= 1.0:
            raise InvalidParameterError("pi_s must lie in [0, 1]")
        if np.any(np.asarray(self.arrival_intensity, dtype=float) < 0):
            raise InvalidParameterError("arrival intensity must be non-negative")

    def arrivals(self, T):
        """Arrival intensity for minislots ``1..T`` as an array."""
        arr = np.asarray(self.arrival_intensity, dtype=float)
        if arr.ndim == 0:
            return np.full(T, float(arr))
        if arr.size < T:
            raise InvalidParameterError(
                f"arrival schedule has {arr.size} entries, need {T}")
        return arr[:T].copy()


@dataclass(frozen=True)
class RadioParams:
    """Random-access radio parameters shared by all mIoT slices.

    Parameters
    ----------
    rho_o : float
        Power-control cutoff, watts.
    sigma2 : float
        Noise power, watts.
    lambda_R : float
        RRH intensity, RRHs/km^2.
    xi : int
        Preamble pool size.
    a : float
        PRACH tone spacing, MHz.
    L_bits : float
        IoT packet size in bits.
    pathloss_exp : float
    minislot_s : float
        Minislot duration in seconds; the single time conversion point.
    """

    rho_o: float
    sigma2: float
    lambda_R: float
    xi: int
    a: float
    L_bits: float
    pathloss_exp: float = 4.0
    minislot_s: float = 1.0

    def __post_init__(self):
        checks = [
            (self.rho_o > 0, "rho_o"), (self.sigma2 > 0, "sigma2"),
            (self.lambda_R > 0, "lambda_R"), (self.xi >= 1, "xi"),
            (self.a > 0, "a"), (self.L_bits > 0, "L_bits"),
            (self.pathloss_exp > 2, "pathloss_exp"), (self.minislot_s > 0, "minislot_s"),
        ]
        for ok, name in checks:
            if not ok:
                raise InvalidParameterError(f"invalid radio parameter {name}")


@dataclass(frozen=True)
class AccessControl:
    """Access control scheme: ``"unrestricted"`` or ``"acb"``."""

    scheme: str = "unrestricted"
    p_acb: float = 1.0

    def __post_init__(self):
        if self.scheme not in ("unrestricted", "acb"):
            raise InvalidParameterError(f"unknown access scheme {self.scheme!r}")
        if not 0.0 < self.p_acb <= 1.0:
            raise InvalidParameterError("p_acb must lie in (0, 1]")


@dataclass(frozen=True)
class UrllcSliceProfile:
    """One URLLC slice.

    Parameters
    ----------
    slice_id : int
    device_count : int
    D_s : float
        Latency bound in seconds.
    lambda_s : float
        Packet arrivals per device per minislot.
    L_bits_u : float
        Payload per packet in bits.
    """

    slice_id: int
    device_count: int
    D_s: float
    lambda_s: float
    L_bits_u: float = 160.0

    def __post_init__(self):
        if self.device_count < 1:
            raise InvalidParameterError("device_count must be >= 1")
        if not self.D_s > 0:
            raise InvalidParameterError("D_s must be positive")
        if self.lambda_s < 0:
            raise InvalidParameterError("lambda_s must be non-negative")


@dataclass(frozen=True)
class UrllcGlobals:
    """Parameters shared by all URLLC slices.

    ``kappa`` is in channel uses per second per Hz; ``minislot_s`` converts
    the per-minislot arrival rates to per-second rates.
    """

    alpha_block: float = 1e-5
    beta_decode: float = 2e-8
    varsigma: float = 2e-5
    kappa: float = 5.12e-4
    phi_snr: float = 1.5
    sigma2_u: float = 1e-13
    eta: float = 100.0
    rho_tilde: float = 1.0
    minislot_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha_block < self.varsigma < 1:
            raise InvalidParameterError("need 0 < alpha < varsigma < 1")
        if not 0 < self.beta_decode < 0.5:
            raise InvalidParameterError("beta must lie in (0, 0.5)")
        if not self.phi_snr > 1:
            raise InvalidParameterError("phi must exceed 1")
        if not self.eta > 0 or self.rho_tilde < 0 or not self.kappa > 0:
            raise InvalidParameterError("eta, kappa must be positive and rho_tilde >= 0")
        if not self.sigma2_u > 0 or not self.minislot_s > 0:
            raise InvalidParameterError("sigma2_u and minislot must be positive")


@dataclass(frozen=True)
class AlgorithmParams:
    """Optimizer and simulation knobs."""

    T: int = 60
    M: int = 20
    mu: float = 2.9e-3
    k_max: int = 250
    q_max: int = 250
    seed: int = 0
    admm_tol_factor: float = 1e-3
    inner_rel_tol: float = 1e-5
    kkt_tol: float = 1e-6
    cut_tol: float = 1e-7
    bisection_tol: float = 1e-6
    ps_init: str = "noise"
    laplace_mode: str = "closed"
    layout_seed: int | None = None

    def __post_init__(self):
        if self.T < 1 or self.M < 1 or self.k_max < 1 or self.q_max < 1:
            raise InvalidParameterError("T, M, k_max, q_max must be >= 1")
        if not self.mu > 0:
            raise InvalidParameterError("mu must be positive")
        if self.ps_init not in ("noise", "one", "zero"):
            raise InvalidParameterError("ps_init must be noise, one or zero")
        if self.laplace_mode not in ("closed", "physical"):
            raise InvalidParameterError("laplace_mode must be closed or physical")


@dataclass(frozen=True)
class MonteCarloParams:
    """Knobs of the discrete-event validation run."""

    intensity_scale: float = 1.0 / 30.0
    replications: int = 200
    side_km: float = 1.0
    prach: int = 1


@dataclass(frozen=True)
class SystemConfig:
    """Complete parsed configuration."""

    W: float
    alpha_g: float
    E_hat_I: float
    radio: RadioParams
    access: AccessControl
    miot: tuple
    urllc: tuple
    ugl: UrllcGlobals
    E_j: float
    J: int
    K: int
    antenna_gain_db: float
    shadowing_db: float
    area_km: float
    algo: AlgorithmParams
    mc: MonteCarloParams
    gamma_kbits: tuple = ()

    @property
    def n_miot(self):
        return len(self.miot)

    @property
    def n_urllc_devices(self):
        return sum(p.device_count for p in self.urllc)

    def miot_reserve_power(self):
        """Per-RRH power set aside for mIoT feedback, watts."""
        lam = sum(p.lambda_I for p in self.miot)
        return (1.0 + self.alpha_g) * lam / self.radio.lambda_R * self.E_hat_I

    def with_access(self, access):
        return replace(self, access=access)

    def with_algo(self, **kw):
        return replace(self, algo=replace(self.algo, **kw))


DEFAULTS: dict = {
    "system": {"W_MHz": 60.0, "a_MHz": 0.18, "alpha_g": 0.05, "minislot_s": 1.0},
    "miot": {
        "lambda_R": 3.0, "xi": 54, "L_bits": 2000.0, "rho_o_dBm": -90.0,
        "sigma2_dBm": -90.0, "pathloss_exp": 4.0, "E_hat_I_mW": 0.03,
        "access": {"scheme": "unrestricted", "p_acb": 1.0},
        "slices": [
            {"lambda_I": 18000.0, "gamma_kbits": 5.8, "arrival": 1.5, "pi": 0.5},
            {"lambda_I": 18000.0, "gamma_kbits": 4.35, "arrival": 1.0, "pi": 0.5},
            {"lambda_I": 18000.0, "gamma_kbits": 2.9, "arrival": 0.5, "pi": 0.5},
        ],
    },
    "urllc": {
        "J": 3, "K": 2, "E_j_W": 3.0, "antenna_gain_dB": 5.0, "shadowing_dB": 10.0,
        "sigma2_u_dBm": -100.0, "alpha": 1e-5, "beta": 2e-8, "varsigma": 2e-5,
        "kappa": 5.12e-4, "phi": 1.5, "eta": 100.0, "rho_tilde": 1.0, "area_km": 1.0,
        "slices": [
            {"devices": 3, "D_ms": 1.0, "lambda": 0.1, "L_bits": 160.0},
            {"devices": 5, "D_ms": 2.0, "lambda": 0.1, "L_bits": 160.0},
        ],
    },
    "algorithm": {
        "T": 60, "M": 20, "mu": 2.9e-3, "k_max": 250, "q_max": 250, "seed": 0,
        "admm_tol_factor": 1e-3, "inner_rel_tol": 1e-5, "kkt_tol": 1e-6,
        "cut_tol": 1e-7, "bisection_tol": 1e-6, "ps_init": "noise",
        "laplace_mode": "closed", "layout_seed": None,
    },
    "montecarlo": {"intensity_scale": 1.0 / 30.0, "replications": 200, "side_km": 1.0,
                   "prach": 1},
    "sweep": None,
}


def default_config_dict():
    """Deep copy of the default configuration dictionary."""
    return copy.deepcopy(DEFAULTS)


def merge(base, override, path=""):
    """Recursively overlay ``override`` onto ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        here = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(here, "unknown field")
        if isinstance(out[key], dict) and isinstance(val, dict) and key != "sweep":
            out[key] = merge(out[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _num(d, key, path, lo=None, hi=None, strict_lo=False, integer=False):
    here = f"{path}.{key}"
    if key not in d:
        raise ConfigError(here, "missing field")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(here, f"expected a number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise ConfigError(here, "must be finite")
    if integer and int(v) != v:
        raise ConfigError(here, "expected an integer")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigError(here, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and v > hi:
        raise ConfigError(here, f"must be <= {hi}")
    return int(v) if integer else float(v)


def parse_config(raw: dict) -> SystemConfig:
    """Validate a configuration dictionary and convert it to internal units.

    Parameters
    ----------
    raw : dict
        Dictionary shaped like :data:`DEFAULTS`; missing sections fall back
        to the defaults.

    Returns
    -------
    SystemConfig

    Raises
    ------
    ConfigError
        With the dotted path of the first offending field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    d = merge(DEFAULTS, raw)
    sy, mi, ur, al, mc = d["system"], d["miot"], d["urllc"], d["algorithm"], d["montecarlo"]
    W = _num(sy, "W_MHz", "system", 0, strict_lo=True)
    a = _num(sy, "a_MHz", "system", 0, strict_lo=True)
    alpha_g = _num(sy, "alpha_g", "system", 0)
    minislot = _num(sy, "minislot_s", "system", 0, strict_lo=True)
    try:
        radio = RadioParams(
            rho_o=float(dbm_to_watt(_num(mi, "rho_o_dBm", "miot"))),
            sigma2=float(dbm_to_watt(_num(mi, "sigma2_dBm", "miot"))),
            lambda_R=_num(mi, "lambda_R", "miot", 0, strict_lo=True),
            xi=_num(mi, "xi", "miot", 1, integer=True),
            a=a,
            L_bits=_num(mi, "L_bits", "miot", 0, strict_lo=True),
            pathloss_exp=_num(mi, "pathloss_exp", "miot", 2, strict_lo=True),
            minislot_s=minislot,
        )
    except InvalidParameterError as exc:
        raise ConfigError("miot", str(exc)) from exc
    acc = mi["access"]
    if not isinstance(acc, dict) or acc.get("scheme") not in ("unrestricted", "acb"):
        raise ConfigError("miot.access.scheme", "must be 'unrestricted' or 'acb'")
    p_acb = _num(acc, "p_acb", "miot.access", 0, hi=1, strict_lo=True)
    access = AccessControl(acc["scheme"], p_acb)
    slices = mi["slices"]
    if not isinstance(slices, list) or not slices:
        raise ConfigError("miot.slices", "need at least one slice")
    miot, gammas = [], []
    for idx, sl in enumerate(slices):
        path = f"miot.slices[{idx}]"
        if not isinstance(sl, dict):
            raise ConfigError(path, "expected an object")
        unknown = set(sl) - {"lambda_I", "gamma_kbits", "arrival", "pi"}
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
        gam = _num(sl, "gamma_kbits", path, 0, strict_lo=True)
        arr = sl.get("arrival")
        if isinstance(arr, list):
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 for v in arr):
                raise ConfigError(f"{path}.arrival", "schedule entries must be numbers >= 0")
            arr_v = tuple(float(v) for v in arr)
        else:
            arr_v = _num(sl, "arrival", path, 0)
        miot.append(MiotSliceProfile(
            slice_id=idx,
            lambda_I=_num(sl, "lambda_I", path, 0, strict_lo=True),
            theta_th=theta_from_rate(gam, a, minislot),
            arrival_intensity=arr_v,
            pi_s=_num(sl, "pi", path, 0, hi=1),
        ))
        gammas.append(gam)
    try:
        ugl = UrllcGlobals(
            alpha_block=_num(ur, "alpha", "urllc", 0, strict_lo=True),
            beta_decode=_num(ur, "beta", "urllc", 0, strict_lo=True),
            varsigma=_num(ur, "varsigma", "urllc", 0, strict_lo=True),
            kappa=_num(ur, "kappa", "urllc", 0, strict_lo=True),
            phi_snr=_num(ur, "phi", "urllc", 1, strict_lo=True),
            sigma2_u=float(dbm_to_watt(_num(ur, "sigma2_u_dBm", "urllc"))),
            eta=_num(ur, "eta", "urllc", 0, strict_lo=True),
            rho_tilde=_num(ur, "rho_tilde", "urllc", 0),
            minislot_s=minislot,
        )
    except InvalidParameterError as exc:
        raise ConfigError("urllc", str(exc)) from exc
    uslices = ur["slices"]
    if not isinstance(uslices, list):
        raise ConfigError("urllc.slices", "expected a list")
    urllc = []
    for idx, sl in enumerate(uslices):
        path = f"urllc.slices[{idx}]"
        if not isinstance(sl, dict):
            raise ConfigError(path, "expected an object")
        unknown = set(sl) - {"devices", "D_ms", "lambda", "L_bits"}
        if unknown:
            raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
        urllc.append(UrllcSliceProfile(
            slice_id=idx,
            device_count=_num(sl, "devices", path, 1, integer=True),
            D_s=_num(sl, "D_ms", path, 0, strict_lo=True) * 1e-3,
            lambda_s=_num(sl, "lambda", path, 0),
            L_bits_u=_num(sl, "L_bits", path, 0, strict_lo=True) if "L_bits" in sl else 160.0,
        ))
    layout_seed = al.get("layout_seed")
    if layout_seed is not None and (isinstance(layout_seed, bool) or not isinstance(layout_seed, int)):
        raise ConfigError("algorithm.layout_seed", "expected an integer or null")
    for key in ("ps_init", "laplace_mode"):
        if not isinstance(al.get(key), str):
            raise ConfigError(f"algorithm.{key}", "expected a string")
    try:
        algo = AlgorithmParams(
            T=_num(al, "T", "algorithm", 1, integer=True),
            M=_num(al, "M", "algorithm", 1, integer=True),
            mu=_num(al, "mu", "algorithm", 0, strict_lo=True),
            k_max=_num(al, "k_max", "algorithm", 1, integer=True),
            q_max=_num(al, "q_max", "algorithm", 1, integer=True),
            seed=_num(al, "seed", "algorithm", 0, integer=True),
            admm_tol_factor=_num(al, "admm_tol_factor", "algorithm", 0, strict_lo=True),
            inner_rel_tol=_num(al, "inner_rel_tol", "algorithm", 0, strict_lo=True),
            kkt_tol=_num(al, "kkt_tol", "algorithm", 0, strict_lo=True),
            cut_tol=_num(al, "cut_tol", "algorithm", 0, strict_lo=True),
            bisection_tol=_num(al, "bisection_tol", "algorithm", 0, strict_lo=True),
            ps_init=al["ps_init"],
            laplace_mode=al["laplace_mode"],
            layout_seed=layout_seed,
        )
    except InvalidParameterError as exc:
        raise ConfigError("algorithm", str(exc)) from exc
    mcp = MonteCarloParams(
        intensity_scale=_num(mc, "intensity_scale", "montecarlo", 0, hi=1, strict_lo=True),
        replications=_num(mc, "replications", "montecarlo", 1, integer=True),
        side_km=_num(mc, "side_km", "montecarlo", 0, strict_lo=True),
        prach=_num(mc, "prach", "montecarlo", 1, integer=True),
    )
    if d.get("sweep") is not None:
        validate_sweep(d["sweep"])
    return SystemConfig(
        W=W, alpha_g=alpha_g,
        E_hat_I=float(_num(mi, "E_hat_I_mW", "miot", 0)) * 1e-3,
        radio=radio, access=access, miot=tuple(miot), urllc=tuple(urllc), ugl=ugl,
        E_j=_num(ur, "E_j_W", "urllc", 0, strict_lo=True),
        J=_num(ur, "J", "urllc", 1, integer=True),
        K=_num(ur, "K", "urllc", 1, integer=True),
        antenna_gain_db=_num(ur, "antenna_gain_dB", "urllc"),
        shadowing_db=_num(ur, "shadowing_dB", "urllc", 0),
        area_km=_num(ur, "area_km", "urllc", 0, strict_lo=True),
        algo=algo, mc=mcp, gamma_kbits=tuple(gammas),
    )


SWEEP_AXES = ("n", "lambda", "W", "p_acb", "m", "d", "eta", "none")


def validate_sweep(sw):
    """Check a sweep specification ``{"axis": ..., "values": [...]}``."""
    if not isinstance(sw, dict):
        raise ConfigError("sweep", "expected an object")
    if sw.get("axis") not in SWEEP_AXES:
        raise ConfigError("sweep.axis", f"must be one of {', '.join(SWEEP_AXES)}")
    vals = sw.get("values")
    if not isinstance(vals, list) or not vals:
        raise ConfigError("sweep.values", "expected a non-empty list")
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"sweep.values[{i}]", "expected a finite number")
    unknown = set(sw) - {"axis", "values"}
    if unknown:
        raise ConfigError(f"sweep.{sorted(unknown)[0]}", "unknown field")


def apply_sweep_value(raw: dict, axis: str, value: float) -> dict:
    """Return a copy of ``raw`` with one sweep axis set to ``value``.

    Axes: ``n`` sets every mIoT intensity to ``900 n``; ``lambda`` sets every
    URLLC arrival rate; ``W`` the system bandwidth; ``p_acb`` switches to ACB;
    ``m`` scales serving rates to ``{3.6, 2.7, 1.8} m``; ``d`` sets latency
    bounds to ``{0.25, 0.5} d`` ms; ``eta`` the energy coefficient.
    """
    d = merge(DEFAULTS, raw)
    if axis == "n":
        for sl in d["miot"]["slices"]:
            sl["lambda_I"] = 900.0 * value
    elif axis == "lambda":
        for sl in d["urllc"]["slices"]:
            sl["lambda"] = float(value)
    elif axis == "W":
        d["system"]["W_MHz"] = float(value)
    elif axis == "p_acb":
        d["miot"]["access"] = {"scheme": "acb", "p_acb": float(value)}
    elif axis == "m":
        base = [3.6, 2.7, 1.8]
        for i, sl in enumerate(d["miot"]["slices"]):
            sl["gamma_kbits"] = base[i % 3] * value
    elif axis == "d":
        base = [0.25, 0.5]
        for i, sl in enumerate(d["urllc"]["slices"]):
            sl["D_ms"] = base[i % 2] * value
    elif axis == "eta":
        d["urllc"]["eta"] = float(value)
    elif axis != "none":
        raise ConfigError("sweep.axis", f"unknown axis {axis!r}")
    d["sweep"] = None
    return d


def load_config_file(path) -> tuple[SystemConfig, dict]:
    """Read and parse a JSON configuration file.

    Returns
    -------
    (SystemConfig, dict)
        Parsed configuration and the merged raw dictionary for echoing.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from exc
    cfg = parse_config(raw)
    return cfg, merge(DEFAULTS, raw)


def default_config(**algo_overrides) -> SystemConfig:
    """Parsed default configuration with optional algorithm overrides."""
    cfg = parse_config({})
    return cfg.with_algo(**algo_overrides) if algo_overrides else cfg
