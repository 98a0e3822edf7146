import csv
import json
import subprocess
import sys

import pytest

from raplprop.cli import main
from raplprop.metrics import read_cdf_csv, read_curves_csv
from raplprop.validation import validate

FAST = ["--duration", "3", "--settle", "0"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCalibrate:
    def test_specpower(self, capsys):
        code, out, _ = run(capsys, "calibrate", "--profile", "specpower-2012", *FAST, "--calibration-runs", "2")
        assert code == 0 and "1120000 ops" in out

    def test_specweb(self, capsys):
        code, out, _ = run(capsys, "calibrate", "--profile", "specweb-ecommerce", *FAST)
        assert code == 0 and "13000 sessions" in out

    def test_repeatable(self, capsys):
        a = run(capsys, "calibrate", *FAST, "--seed", "3")
        b = run(capsys, "calibrate", *FAST, "--seed", "3")
        assert a == b

    def test_msr_without_access(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("RAPLPROP_MSR_ROOT", str(tmp_path / "absent"))
        code, _, err = run(capsys, "calibrate", "--backend", "msr")
        assert code == 2 and "backend error" in err

    def test_msr_cannot_drive_levels(self, capsys, msr_tree):
        code, _, err = run(capsys, "calibrate", "--backend", "msr", *FAST)
        assert code == 2 and "BackendFailure" in err


class TestProfileRun:
    def test_metrics_block(self, capsys, tmp_path):
        code, out, _ = run(capsys, "profile-run", "--output-dir", tmp_path, "--duration", "10", "--settle", "1")
        assert code == 0
        doc = json.loads((tmp_path / "run-report.json").read_text())
        validate(doc, "run-report")
        assert doc["metrics"]["full_system"]["ep"] == pytest.approx(0.54, abs=0.02)
        curves = read_curves_csv(tmp_path / "power-curves.csv")
        assert curves["core"].points() == [
            (lvl["load"], lvl["avg_power_w"]["core"]) for lvl in sorted(doc["levels"], key=lambda x: x["load"])
        ]
        assert "full_system" in out

    def test_two_levels(self, capsys, tmp_path):
        code, _, _ = run(capsys, "profile-run", "--output-dir", tmp_path, "--levels", "1.0,0.0", *FAST)
        doc = json.loads((tmp_path / "run-report.json").read_text())
        assert code == 0 and len(doc["levels"]) == 2 and doc["metrics"]

    def test_byte_identical(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert run(capsys, "profile-run", "--output-dir", tmp_path / d, "--no-timestamps",
                       "--levels", "1,0.5,0", "--seed", "9", *FAST)[0] == 0
        for name in ("run-report.json", "power-curves.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert "generated_at" not in (tmp_path / "a" / "run-report.json").read_text()

    def test_config_precedence(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"load_levels": [1.0, 0.0], "level_duration": 2.0,
                                   "profile": "specweb-ecommerce", "seed": 4}))
        code, _, _ = run(capsys, "profile-run", "--config", cfg, "--output-dir", tmp_path,
                         "--duration", "3", "--no-timestamps")
        doc = json.loads((tmp_path / "run-report.json").read_text())
        assert code == 0
        assert doc["profile"] == "specweb-ecommerce"
        assert doc["config"]["level_duration"] == 3.0 and doc["config"]["seed"] == 4
        assert [lvl["load"] for lvl in doc["levels"]] == [1.0, 0.0]

    def test_bad_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"levels": [1.0]}))
        code, _, err = run(capsys, "profile-run", "--config", cfg)
        assert code == 3 and "levels" in err

    def test_verdict_failure_exit(self, capsys, tmp_path):
        code, _, err = run(capsys, "profile-run", "--output-dir", tmp_path, "--levels", "1,0",
                           "--time-good", "0.5", "--profile", "specweb-ecommerce", *FAST)
        assert code == 1 and "failed" in err


class TestMetrics:
    def test_from_run_report(self, capsys, tmp_path):
        run(capsys, "profile-run", "--output-dir", tmp_path, "--duration", "5", "--settle", "0")
        out_json = tmp_path / "ep.json"
        code, out, _ = run(capsys, "metrics", tmp_path / "run-report.json", "--json", out_json)
        assert code == 0
        doc = json.loads(out_json.read_text())
        validate(doc, "ep-report")
        assert doc["reports"]["full_system"]["ld"] == pytest.approx(0.067, abs=0.02)
        assert doc["reports"]["core"]["ld"] == pytest.approx(0.095, abs=0.02)

    def test_from_curves_csv(self, capsys, tmp_path):
        run(capsys, "profile-run", "--output-dir", tmp_path, "--levels", "1,0.5,0", *FAST)
        code, out, _ = run(capsys, "metrics", tmp_path / "power-curves.csv")
        assert code == 0 and "uncore" in out

    def test_ideal_curve(self, capsys, tmp_path):
        path = tmp_path / "ideal.json"
        path.write_text(json.dumps({"curves": {"ideal": [[u / 10, 20.0 * u] for u in range(11)]}}))
        out_json = tmp_path / "ep.json"
        assert run(capsys, "metrics", path, "--json", out_json)[0] == 0
        r = json.loads(out_json.read_text())["reports"]["ideal"]
        assert r["ep"] == pytest.approx(1.0) and r["ld"] == pytest.approx(0.0, abs=1e-12)
        assert all(v == pytest.approx(0.0, abs=1e-12) for v in r["pg"].values())

    def test_malformed_names_field(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"schema": "raplprop/run-report/1", "levels": []}))
        code, _, err = run(capsys, "metrics", path)
        assert code == 3 and "field" in err

    def test_missing_avg_power(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"levels": [{"load": 1.0}]}))
        code, _, err = run(capsys, "metrics", path)
        assert code == 3 and "levels[0].avg_power_w" in err

    def test_not_json(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        assert run(capsys, "metrics", path)[0] == 3

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "metrics", tmp_path / "nope.json")[0] == 3


class TestTraceAndCdf:
    def test_package_cdf_default_normaliser(self, capsys, tmp_path):
        code, out, _ = run(capsys, "cdf", "--output-dir", tmp_path, "--domain", "package",
                           "--trace-duration", "20")
        assert code == 0 and "normaliser 360 W" in out
        cdf = read_cdf_csv(tmp_path / "cdf-package.csv")
        assert cdf.values[-1] < 0.5 and cdf.cumulative[-1] == 1.0

    def test_trace_then_cdf(self, capsys, tmp_path):
        code, _, _ = run(capsys, "trace", "--output-dir", tmp_path, "--trace-duration", "2",
                         "--domains", "package,dram-1,full_system")
        assert code == 0
        with open(tmp_path / "power-trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["domain"] for r in rows} == {"package", "dram-1", "full_system"}
        code, out, _ = run(capsys, "cdf", "--output-dir", tmp_path, "--trace", tmp_path / "power-trace.csv",
                           "--domain", "dram-1")
        assert code == 0 and "normaliser 75 W" in out

    def test_constant_trace_single_step(self, capsys, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("timestamp_s,domain,power_w\n0.0,package,90.0\n0.05,package,90.0\n0.1,package,90.0\n")
        code, _, _ = run(capsys, "cdf", "--trace", path, "--output-dir", tmp_path)
        assert code == 0
        assert (tmp_path / "cdf-package.csv").read_text().splitlines() == [
            "normalized_power,cumulative_fraction", "0.25,1.0"]

    def test_empty_trace(self, capsys, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("timestamp_s,domain,power_w\n")
        code, _, err = run(capsys, "cdf", "--trace", path, "--output-dir", tmp_path)
        assert code == 3 and "EmptyTrace" in err

    def test_full_system_needs_normaliser(self, capsys, tmp_path):
        code, _, _ = run(capsys, "cdf", "--domain", "full_system", "--trace-duration", "1",
                         "--output-dir", tmp_path)
        assert code == 3
        code, _, _ = run(capsys, "cdf", "--domain", "full_system", "--trace-duration", "1",
                         "--normalizer", "800", "--output-dir", tmp_path)
        assert code == 0


class TestOptimize:
    def test_memonly_fifteen(self, capsys, tmp_path):
        code, out, _ = run(capsys, "optimize", "--policies", "memonly", "--output-dir", tmp_path, *FAST)
        assert code == 0
        doc = json.loads((tmp_path / "suite-report.json").read_text())
        validate(doc, "suite-report")
        for lvl in doc["levels"]:
            assert lvl["policies"]["memonly"]["candidates_evaluated"] == 15

    def test_specweb_dominance(self, capsys, tmp_path):
        code, _, _ = run(capsys, "optimize", "--profile", "specweb-ecommerce", "--output-dir", tmp_path,
                         "--no-timestamps", *FAST)
        assert code == 0
        doc = json.loads((tmp_path / "suite-report.json").read_text())
        for lvl in doc["levels"]:
            s = {p: r["savings_pct"] for p, r in lvl["policies"].items()}
            assert s["cpumem"] >= s["cpuonly"] >= s["memonly"]
            assert lvl["policies"]["cpumem"]["candidates_evaluated"] == 225

    def test_unknown_policy(self, capsys):
        assert run(capsys, "optimize", "--policies", "pkgonly")[0] == 3

    def test_msr_dry_run_prints_writes(self, capsys, tmp_path, msr_tree):
        before = {p: p.read_bytes() for p in msr_tree.rglob("msr")}
        code, out, _ = run(capsys, "optimize", "--backend", "msr", "--dry-run", "--levels", "0.6",
                           "--policies", "cpumem", "--output-dir", tmp_path, *FAST)
        assert code == 0
        writes = [l for l in out.splitlines() if " msr 0x" in l]
        assert any("0x638" in l for l in writes) and any("0x618" in l for l in writes)
        assert all("<- 0x" in l for l in writes)
        assert {p: p.read_bytes() for p in msr_tree.rglob("msr")} == before

    def test_msr_without_dry_run(self, capsys, msr_tree):
        assert run(capsys, "optimize", "--backend", "msr", *FAST)[0] == 2


class TestRegisters:
    def test_sim_listing(self, capsys):
        code, out, _ = run(capsys, "registers")
        assert code == 0
        assert "power 0.125 W" in out and "range 51-180 W" in out and "range 15-75 W" in out

    def test_sim_dry_run_set(self, capsys):
        code, out, _ = run(capsys, "registers", "--set", "core-0=40", "--dry-run")
        assert code == 0 and "msr 0x638 <-" in out

    def test_out_of_range(self, capsys):
        code, _, err = run(capsys, "registers", "--set", "dram-0=500")
        assert code == 3 and "OutOfRange" in err

    def test_bad_set_syntax(self, capsys):
        assert run(capsys, "registers", "--set", "core-0")[0] == 3

    def test_msr_write(self, capsys, msr_tree):
        code, out, _ = run(capsys, "registers", "--backend", "msr", "--set", "package-1=120")
        assert code == 0 and "package-1 <- 0x" in out


class TestMisc:
    def test_profile_list_and_show(self, capsys):
        code, out, _ = run(capsys, "profile", "list")
        assert code == 0 and "specweb-ecommerce" in out
        code, out, _ = run(capsys, "profile", "show", "specweb-ecommerce")
        assert json.loads(out)["max_performance"] == 13000

    def test_unknown_profile(self, capsys):
        assert run(capsys, "calibrate", "--profile", "nope")[0] == 3

    def test_usage_error_is_input_error(self):
        with pytest.raises(SystemExit) as e:
            main(["calibrate", "--duration", "abc"])
        assert e.value.code == 3

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "raplprop", "--version"], capture_output=True, text=True)
        assert r.returncode == 0 and r.stdout.startswith("raplprop ")
