"""Command line, presets, CSV schema and manifests."""
import csv
import json
import subprocess
import sys

import pytest

from ranslice import harness
from ranslice.cli import main
from ranslice.config import DEFAULTS, parse_config

FROZEN_SCHEMA = {
    "sweep": ["axis", "value", "variant", "seed", "status", "U_total", "U_miot", "U_urllc",
              "omega_miot", "omega_miot_total", "omega_urllc", "energy_urllc", "served_mean",
              "served_min", "n_urllc", "admm_iterations", "admm_delta", "converged",
              "tightness_min", "power_excess_max"],
    "compare": ["axis", "value", "variant", "trials", "U_total", "U_miot", "U_urllc",
                "omega_miot_total", "omega_urllc", "energy_urllc", "served_mean",
                "fallback_count", "infeasible_count", "ratio_to_first"],
    "queue": ["regime", "t", "slice", "gamma_kbits", "omega", "p_s", "p_ne", "mean_queue"],
    "convergence": ["k", "delta", "dual_sum", "consensus_gap", "inner", "omega"],
    "validate_mc": ["t", "slice", "p_hat", "p_analytic", "mean_queue", "p_hat_se", "attempts",
                    "abs_gap"],
}


def header(path):
    with open(path, encoding="utf-8") as fh:
        return next(csv.reader(fh))


def write_cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj, encoding="utf-8")
    return str(p)


def test_schema_is_frozen():
    assert harness.load_schema() == FROZEN_SCHEMA


def test_defaults_parse():
    cfg = parse_config({})
    assert cfg.W == 60.0 and cfg.n_miot == 3 and cfg.n_urllc_devices == 8
    assert cfg.E_j == pytest.approx(3.0)
    assert cfg.ugl.sigma2_u == pytest.approx(1e-13)


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in ("fig4-queue", "fig6-iot-sweep", "validate-mc", "fig3-convergence"):
        assert name in out


def test_queue_preset_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "fig4-queue", "--out", str(a)]) == 0
    assert main(["run", "fig4-queue", "--out", str(b)]) == 0
    ca, cb = (a / "fig4-queue.csv").read_bytes(), (b / "fig4-queue.csv").read_bytes()
    assert ca == cb
    assert header(a / "fig4-queue.csv") == FROZEN_SCHEMA["queue"]
    rows = list(csv.DictReader(open(a / "fig4-queue.csv", encoding="utf-8")))
    assert {r["regime"] for r in rows} == {"flush", "growth"}
    assert len(rows) == 2 * 60 * 3
    man = json.loads((a / "fig4-queue.manifest.json").read_text(encoding="utf-8"))
    assert man["config"]["system"] == DEFAULTS["system"]
    assert man["config"]["miot"] == DEFAULTS["miot"]
    assert {"numpy", "scipy", "cvxopt", "python"} <= set(man["versions"])


def _tiny(extra=None):
    d = {"algorithm": {"T": 3, "M": 1, "k_max": 3},
         "sweep": {"axis": "W", "values": [2.0, 1.0]}}
    if extra:
        for k, v in extra.items():
            d.setdefault(k, {}).update(v)
    return d


def test_sweep_rows_ordered_and_worker_independent(tmp_path):
    cfgp = write_cfg(tmp_path, _tiny())
    assert main(["run", cfgp, "--out", str(tmp_path / "w1")]) == 0
    assert main(["run", cfgp, "--out", str(tmp_path / "w2"), "--workers", "2"]) == 0
    one = (tmp_path / "w1" / "run.csv").read_bytes()
    assert one == (tmp_path / "w2" / "run.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "w1" / "run.csv", encoding="utf-8")))
    assert [float(r["value"]) for r in rows] == [1.0, 2.0]
    assert all(r["status"] in ("ok", "fallback") for r in rows)
    assert header(tmp_path / "w1" / "run.csv") == FROZEN_SCHEMA["sweep"]


@pytest.mark.parametrize("content", [
    "{not json",
    {"system": {"W_MHz": -5}},
    {"system": {"bogus": 1}},
    {"sweep": {"axis": "nope", "values": [1]}},
    {"miot": {"access": {"scheme": "acb", "p_acb": 1.5}}},
    {"urllc": {"alpha": 3e-5, "varsigma": 2e-5}},
])
def test_config_errors_exit_2(tmp_path, content, capsys):
    assert main(["run", write_cfg(tmp_path, content), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_single_variant_exit_2(tmp_path):
    assert main(["compare", "default", "--variants", "SRO", "--out", str(tmp_path)]) == 2
    assert main(["compare", "default", "--variants", "SRO,XYZ", "--out", str(tmp_path)]) == 2


def test_infeasible_everywhere_exit_3(tmp_path):
    # per-RRH budget below the mIoT feedback reserve
    cfgp = write_cfg(tmp_path, _tiny({"urllc": {"E_j_W": 0.1},
                                      "system": {}, "sweep": {"axis": "eta", "values": [50, 100]}}))
    assert main(["run", cfgp, "--out", str(tmp_path)]) == 3
    rows = list(csv.DictReader(open(tmp_path / "run.csv", encoding="utf-8")))
    assert [r["status"] for r in rows] == ["infeasible", "infeasible"]
    assert all(r["U_total"] == "nan" for r in rows)


def test_compare_ratio_column(tmp_path):
    cfgp = write_cfg(tmp_path, _tiny({"sweep": {"axis": "W", "values": [2.0]}}))
    assert main(["compare", cfgp, "--variants", "SRO,SRO-ACB_II", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "compare-run.csv", encoding="utf-8")))
    assert [r["variant"] for r in rows] == ["SRO", "SRO-ACB_II"]
    assert float(rows[0]["ratio_to_first"]) == 1.0
    assert header(tmp_path / "compare-run.csv") == FROZEN_SCHEMA["compare"]


def test_validate_mc_small(tmp_path):
    cfgp = write_cfg(tmp_path, {"algorithm": {"T": 8}, "montecarlo": {"replications": 3}})
    assert main(["validate-mc", cfgp, "--out", str(tmp_path)]) == 0
    assert header(tmp_path / "validate-mc.csv") == FROZEN_SCHEMA["validate_mc"]
    man = json.loads((tmp_path / "validate-mc.manifest.json").read_text(encoding="utf-8"))
    assert man["summary"]["replications"] == 3


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "ranslice.cli", "presets"],
                         capture_output=True, text=True, check=True)
    assert "default" in out.stdout
