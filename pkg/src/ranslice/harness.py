"""Experiment presets, sweep execution and result files."""
from __future__ import annotations

import csv
import io
import json
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import DEFAULTS, merge, parse_config, apply_sweep_value, theta_from_rate
from .errors import ConfigError
from .miot import evolve_slot
from .orchestrator import algorithm1, run_slot, trust_intervals
from .channels import generate_channel_samples
from .simcore import validate_mc

VARIANTS = ("SRO", "SRO-ACB_I", "SRO-ACB_II", "S3RO")
FLUSH_GAMMA = (5.8, 4.35, 2.9)
GROWTH_GAMMA = (1.8, 1.35, 0.9)

PRESETS = {
    "default": {"kind": "sweep", "sweep": {"axis": "none", "values": [0]}},
    "fig3-convergence": {"kind": "convergence"},
    "fig4-queue": {"kind": "queue"},
    "fig6-iot-sweep": {"kind": "sweep", "sweep": {"axis": "n", "values": [6, 10, 14, 18, 22, 26]}},
    "fig7-urllc-sweep": {"kind": "sweep", "sweep": {"axis": "lambda", "values": [0.1, 1, 3, 5]}},
    "fig8-bandwidth-sweep": {"kind": "sweep",
                             "sweep": {"axis": "W", "values": [45, 50, 55, 60, 65, 70]}},
    "fig9-rate-sweep": {"kind": "sweep", "sweep": {"axis": "m", "values": [0.8, 1.0, 1.2, 1.4]}},
    "fig10-latency-sweep": {"kind": "sweep", "sweep": {"axis": "d", "values": [1, 2, 3, 4]}},
    "eta-sweep": {"kind": "sweep", "sweep": {"axis": "eta", "values": [50, 100, 150, 200]}},
    "acb-sweep": {"kind": "sweep", "sweep": {"axis": "p_acb", "values": [0.5, 0.7, 0.9, 1.0]}},
    "validate-mc": {"kind": "mc"},
}


def load_schema():
    """Frozen CSV column lists, keyed by output kind."""
    with resources.files("ranslice").joinpath("data/schema.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def resolve(target, full=False, seed=None):
    """Preset name or JSON path to ``(kind, raw config dict, sweep)``.

    ``full`` restores the full-scale sample count and Monte-Carlo intensity.
    """
    if target in PRESETS:
        spec = PRESETS[target]
        raw = merge(DEFAULTS, {})
        sweep = spec.get("sweep")
        kind = spec["kind"]
    else:
        try:
            with open(target, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError("<file>", f"no preset or readable file named {target!r}") from exc
        if not isinstance(user, dict):
            raise ConfigError("<root>", "expected a JSON object")
        raw = merge(DEFAULTS, user)
        sweep = raw.get("sweep") or {"axis": "none", "values": [0]}
        kind = "sweep"
    raw["sweep"] = None
    if full:
        raw["algorithm"]["M"] = 100
        raw["montecarlo"]["intensity_scale"] = 1.0
    if seed is not None:
        raw["algorithm"]["seed"] = int(seed)
    parse_config(dict(raw, sweep=sweep))  # validates every field and the sweep up front
    return kind, raw, sweep


def variant_raw(raw, variant):
    """Configuration of one comparison variant."""
    d = merge(DEFAULTS, raw)
    if variant == "SRO":
        pass
    elif variant == "SRO-ACB_I":
        d["miot"]["access"] = {"scheme": "acb", "p_acb": 0.9}
    elif variant == "SRO-ACB_II":
        d["miot"]["access"] = {"scheme": "acb", "p_acb": 0.5}
    elif variant == "S3RO":
        d["algorithm"]["M"] = 1
    else:
        raise ConfigError("variants", f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return d


def fmt(v):
    """Stable text form of a CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".10g")
    return str(v)


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        missing = set(columns) - set(r)
        if missing:
            raise KeyError(f"row lacks columns {sorted(missing)}")
        w.writerow([fmt(r[c]) for c in columns])
    return buf.getvalue()


def sweep_point(args):
    """One (sweep value, variant, seed) run as a CSV row."""
    raw, axis, value, variant, seed = args
    d = apply_sweep_value(variant_raw(raw, variant), axis, value)
    d["algorithm"]["seed"] = int(seed)
    cfg = parse_config(d)
    out = run_slot(cfg, seed=seed)
    plan = out.plan
    hist = plan.history
    tight = plan.tightness()
    rat = [dd.tightness for dd in out.decisions]
    t_all = np.concatenate([tight, rat]) if len(rat) or tight.size else np.array([np.nan])
    return {
        "axis": axis, "value": float(value), "variant": variant, "seed": int(seed),
        "status": plan.status,
        "U_total": out.utility_total, "U_miot": out.utility_miot, "U_urllc": out.utility_urllc,
        "omega_miot": ";".join(fmt(w) for w in plan.omega),
        "omega_miot_total": float(np.sum(plan.omega)),
        "omega_urllc": out.omega_urllc, "energy_urllc": out.energy_urllc,
        "served_mean": out.served_mean,
        "served_min": int(min(dd.served.sum() for dd in out.decisions)) if out.decisions else 0,
        "n_urllc": cfg.n_urllc_devices,
        "admm_iterations": plan.iterations,
        "admm_delta": hist[-1]["delta"] if hist else 0.0,
        "converged": plan.converged,
        "tightness_min": float(np.min(t_all)) if t_all.size else float("nan"),
        "power_excess_max": out.audit_power(cfg),
    }


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def run_sweep(raw, sweep, variant="SRO", workers=1):
    seed = raw["algorithm"]["seed"]
    jobs = [(raw, sweep["axis"], v, variant, seed) for v in sorted(sweep["values"])]
    return _map(sweep_point, jobs, workers)


def compare(raw, sweep, variants, trials=1, workers=1):
    """Matched-seed comparison; one averaged row per (value, variant)."""
    if len(variants) < 2:
        raise ConfigError("variants", "need at least two variants")
    for v in variants:
        variant_raw(raw, v)
    seed0 = raw["algorithm"]["seed"]
    values = sorted(sweep["values"])
    jobs = [(raw, sweep["axis"], val, var, seed0 + k)
            for val in values for var in variants for k in range(trials)]
    res = _map(sweep_point, jobs, workers)
    rows = []
    i = 0
    for val in values:
        first = None
        for var in variants:
            chunk = res[i:i + trials]
            i += trials
            ok = [r for r in chunk if r["status"] != "infeasible"]
            mean = lambda key: float(np.mean([r[key] for r in ok])) if ok else float("nan")
            row = {"axis": sweep["axis"], "value": float(val), "variant": var, "trials": trials,
                   "U_total": mean("U_total"), "U_miot": mean("U_miot"),
                   "U_urllc": mean("U_urllc"), "omega_miot_total": mean("omega_miot_total"),
                   "omega_urllc": mean("omega_urllc"), "energy_urllc": mean("energy_urllc"),
                   "served_mean": mean("served_mean"),
                   "fallback_count": sum(r["status"] == "fallback" for r in chunk),
                   "infeasible_count": len(chunk) - len(ok)}
            if first is None:
                first = row["U_total"]
            row["ratio_to_first"] = row["U_total"] / first if first else float("nan")
            rows.append(row)
    return rows


def queue_rows(raw):
    """Closed-form trajectories for the flush and growth serving rates.

    Both regimes use the bandwidth that maximizes each slice's success
    probability under the flush rates.
    """
    cfg = parse_config(raw)
    _, ivs = trust_intervals(replace(cfg, miot=_with_gamma(cfg, FLUSH_GAMMA)))
    omega = np.array([iv.s_star for iv in ivs])
    rows = []
    for regime, gam in (("flush", FLUSH_GAMMA), ("growth", GROWTH_GAMMA)):
        prof = _with_gamma(cfg, gam)
        tr = evolve_slot(prof, cfg.radio, cfg.access, omega, cfg.algo.T, cfg.algo.ps_init,
                         cfg.algo.laplace_mode)
        for t in range(cfg.algo.T):
            for s in range(len(prof)):
                rows.append({"regime": regime, "t": t + 1, "slice": s, "gamma_kbits": gam[s],
                             "omega": omega[s], "p_s": tr.p_s[t, s], "p_ne": tr.p_ne[t, s],
                             "mean_queue": tr.theta_a[t, s]})
    return rows


def _with_gamma(cfg, gam):
    if len(gam) != cfg.n_miot:
        raise ConfigError("miot.slices", f"queue preset needs {len(gam)} slices")
    return tuple(replace(p, theta_th=theta_from_rate(g, cfg.radio.a, cfg.radio.minislot_s))
                 for p, g in zip(cfg.miot, gam))


def convergence_rows(raw):
    cfg = parse_config(raw)
    omegas = []
    plan = algorithm1(cfg, generate_channel_samples(cfg, cfg.algo.M, cfg.algo.seed),
                      callback=lambda k, st: omegas.append(st.omega_global.copy()))
    rows = [{"k": h["k"], "delta": h["delta"], "dual_sum": h["dual_sum"],
             "consensus_gap": h["consensus_gap"], "inner": h["inner"],
             "omega": ";".join(fmt(w) for w in om)}
            for h, om in zip(plan.history, omegas)]
    return rows, plan


def mc_rows(raw, workers=1):
    cfg = parse_config(raw)
    res = validate_mc(cfg, workers=workers)
    rows = []
    for t in range(res.p_hat.shape[0]):
        for s in range(res.p_hat.shape[1]):
            rows.append({"t": t + 1, "slice": s, "p_hat": res.p_hat[t, s],
                         "p_analytic": res.analytic.p_s[t, s], "mean_queue": res.mean_queue[t, s],
                         "p_hat_se": res.p_hat_se[t, s], "attempts": int(res.attempts[t, s]),
                         "abs_gap": abs(res.p_hat[t, s] - res.analytic.p_s[t, s])})
    return rows, res


def versions():
    import cvxopt
    import scipy
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "cvxopt": cvxopt.__version__, "ranslice": __version__}


def write_outputs(out_dir, name, columns, rows, manifest):
    """Write ``<name>.csv`` and ``<name>.manifest.json``; returns the CSV path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    path.write_text(csv_text(columns, rows), encoding="utf-8")
    (out / f"{name}.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n",
        encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)
