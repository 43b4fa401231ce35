"""Command line entry point: ``ranslice run | compare | validate-mc``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

from . import harness
from .errors import ConfigError, SliceInfeasibleError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

log = logging.getLogger("ranslice")


def build_parser():
    p = argparse.ArgumentParser(prog="ranslice", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("target", help="preset name or JSON config path")
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--full", action="store_true",
                        help="full-scale sample count and Monte-Carlo intensity")

    run = sub.add_parser("run", help="run a preset or config")
    common(run)
    cmp_ = sub.add_parser("compare", help="matched-seed comparison of algorithm variants")
    common(cmp_)
    cmp_.add_argument("--variants", required=True,
                      help=f"comma separated subset of {','.join(harness.VARIANTS)}")
    cmp_.add_argument("--trials", type=int, default=1, help="seeds averaged per row")
    mc = sub.add_parser("validate-mc", help="closed form against Monte-Carlo simulation")
    common(mc)
    mc.add_argument("--replications", type=int, default=None)
    sub.add_parser("presets", help="list presets")
    return p


def _name(target):
    return target if target in harness.PRESETS else "run"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name, spec in harness.PRESETS.items():
            print(f"{name}\t{spec['kind']}")
        return EXIT_OK
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SliceInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


def _dispatch(args):
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    t0 = time.perf_counter()
    kind, raw, sweep = harness.resolve(args.target, args.full, args.seed)
    schema = harness.load_schema()
    manifest = {"command": args.command, "target": args.target, "full": args.full,
                "seed": raw["algorithm"]["seed"], "config": raw, "sweep": sweep,
                "versions": harness.versions()}
    name = _name(args.target)
    if args.command == "validate-mc" or (args.command == "run" and kind == "mc"):
        if getattr(args, "replications", None):
            raw["montecarlo"]["replications"] = args.replications
        rows, res = harness.mc_rows(raw, args.workers)
        manifest["summary"] = {"fraction_within_0.05": res.fraction_within(0.05),
                               "max_abs_gap": res.max_gap(),
                               "defined_pairs": int(res.defined.sum()),
                               "replications": res.replications}
        cols, name = schema["validate_mc"], "validate-mc"
        print(f"max |P - P_hat| = {res.max_gap():.4f}; "
              f"{100 * res.fraction_within(0.05):.1f}% of pairs within 0.05")
    elif args.command == "compare":
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        if args.trials < 1:
            raise ConfigError("--trials", "must be >= 1")
        rows = harness.compare(raw, sweep or {"axis": "none", "values": [0]}, variants,
                               args.trials, args.workers)
        cols, name = schema["compare"], f"compare-{name}"
        manifest["variants"] = variants
        manifest["trials"] = args.trials
        if all(r["infeasible_count"] == r["trials"] for r in rows):
            _finish(args, name, cols, rows, manifest, t0)
            return EXIT_INFEASIBLE
    elif kind == "queue":
        rows, cols = harness.queue_rows(raw), schema["queue"]
    elif kind == "convergence":
        rows, plan = harness.convergence_rows(raw)
        cols = schema["convergence"]
        manifest["summary"] = {"converged": plan.converged, "iterations": plan.iterations,
                               "status": plan.status}
    else:
        rows = harness.run_sweep(raw, sweep, workers=args.workers)
        cols = schema["sweep"]
        if rows and all(r["status"] == "infeasible" for r in rows):
            _finish(args, name, cols, rows, manifest, t0)
            return EXIT_INFEASIBLE
    _finish(args, name, cols, rows, manifest, t0)
    return EXIT_OK


def _finish(args, name, cols, rows, manifest, t0):
    manifest["rows"] = len(rows)
    manifest["runtime_s"] = round(time.perf_counter() - t0, 3)
    path = harness.write_outputs(args.out, name, cols, rows, manifest)
    print(f"wrote {path} ({len(rows)} rows)")


if __name__ == "__main__":
    sys.exit(main())
