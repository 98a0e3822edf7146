import io
import math
import threading

import numpy as np
import pytest

from raplprop.backend import (
    MsrBackend,
    SimBackend,
    read_traces_csv,
    write_traces_csv,
)
from raplprop.codec import DomainId, DomainKind, PowerLimit, energy_delta
from raplprop.errors import DomainUnavailable, OutOfRange, PermissionDenied
from raplprop.node_model import SubsystemCurve, WorkloadKind, WorkloadProfile

PKG0 = DomainId(DomainKind.PACKAGE, 0)
CORE0 = DomainId(DomainKind.CORE, 0)
DRAM0 = DomainId(DomainKind.DRAM, 0)


@pytest.fixture
def flat_profile():
    """Constant-power node: 100 W per package, idle == peak, no fluctuations."""
    flat = lambda w: SubsystemCurve(w, 0.999999, 1.0)
    return WorkloadProfile(
        name="flat", kind=WorkloadKind.THROUGHPUT,
        curves={"package": flat(200.0), "core": flat(120.0), "dram": flat(40.0), "rest_of_system": flat(50.0)},
        max_performance=1000.0, noise_cv=0.0, spike_prob=0.0,
    )


class TestCapabilities:
    def test_sim(self, sim):
        caps = sim.capabilities
        assert caps.is_simulated and caps.sockets == 2 and len(caps.domains) == 6
        assert caps.power_info[PKG0].max_power == 180.0 and caps.power_info[PKG0].min_power == 51.0
        assert caps.power_info[DRAM0].max_time_window == pytest.approx(39.06e-3, abs=1e-4)
        assert CORE0 not in caps.power_info
        assert caps.max_power("package") == 360.0

    def test_core_borrows_package_range(self, sim):
        info = sim.capabilities.limit_info(CORE0)
        assert info.max_power == 180.0 and info.min_power == sim.capabilities.units.power_unit


class TestLimits:
    def test_min_power_accepted(self, sim):
        raw = sim.set_limit(PKG0, PowerLimit(51.0, 1 / 1024))
        assert raw & 0x7FFF == 408
        assert sim.get_limit(PKG0).bound == 51.0

    def test_below_min_rejected(self, sim):
        with pytest.raises(OutOfRange):
            sim.set_limit(PKG0, PowerLimit(50.0, 1 / 1024))

    def test_dram_window_rejected(self, sim):
        with pytest.raises(OutOfRange):
            sim.set_limit(DRAM0, PowerLimit(30.0, 0.05))

    def test_set_clear_restores(self, specpower):
        a = SimBackend(specpower, seed=5)
        baseline = a.run_level(0.6, 10.0)
        b = SimBackend(specpower, seed=5)
        b.set_limit(CORE0, PowerLimit(10.0, 1 / 1024))
        assert b.run_level(0.6, 10.0) != baseline
        b.clear_limit(CORE0)
        assert b.run_level(0.6, 10.0) == baseline
        assert not b.get_limit(CORE0).enabled

    def test_quantised_caps(self, sim):
        r1 = sim.run_level(0.8, 5.0, caps={CORE0: PowerLimit(30.01, 1 / 1024)})
        r2 = sim.run_level(0.8, 5.0, caps={CORE0: PowerLimit(30.0, 1 / 1024)})
        assert r1 == r2

    def test_unknown_domain(self, sim):
        with pytest.raises(DomainUnavailable):
            sim.read_energy(DomainId(DomainKind.CORE, 5))


class TestEnergy:
    def test_counter_bookkeeping(self, flat_profile):
        b = SimBackend(flat_profile)
        r0 = b.read_energy(PKG0)
        b.advance(1.0)
        r1 = b.read_energy(PKG0)
        assert r1.raw_counter - r0.raw_counter == math.floor(b.exact_energy(PKG0) / b.capabilities.units.energy_unit)
        assert r1.timestamp == pytest.approx(1.0)

    def test_constant_power(self, flat_profile):
        b = SimBackend(flat_profile)
        b.set_load(1.0)
        eu = b.capabilities.units.energy_unit
        assert b.average_power(PKG0, 10.0) == pytest.approx(100.0, abs=eu / 10 + 1e-9)
        assert b.average_power("dram-1", 1.0) == pytest.approx(20.0, abs=eu + 1e-9)

    def test_idle_floor(self, specpower):
        b = SimBackend(specpower)
        b.set_load(0.0)
        p = b.average_power(PKG0, 5.0)
        assert p == pytest.approx(specpower.subject_mean("package", 0.0) / 2, rel=0.02)

    def test_forced_wrap(self, specpower):
        eu = 1 / 65536
        b = SimBackend(specpower, counter_offset=2**32 - 50_000)
        b.set_load(1.0)
        before, e0 = b.read_energy(PKG0), b.exact_energy(PKG0)
        b.advance(3.0)
        after, e1 = b.read_energy(PKG0), b.exact_energy(PKG0)
        assert after.raw_counter < before.raw_counter
        assert abs(energy_delta(before, after, b.capabilities.units) - (e1 - e0)) <= eu

    def test_run_level_credits_ledger(self, sim):
        r = sim.run_level(0.5, 4.0)
        assert sim.exact_energy("full_system") == pytest.approx(r.avg_power["full_system"] * 4.0)
        assert sim.clock == pytest.approx(4.0)


class TestTraces:
    def test_sample_count_and_spacing(self, sim):
        sim.set_load(0.5)
        traces = sim.sample_trace(["package", "uncore", "full_system"], 10.0)
        tr = traces["package"]
        assert abs(len(tr) - 200) <= 1
        gaps = np.diff(tr.timestamps)
        assert np.all(np.abs(gaps - 0.05) <= 0.005)
        assert np.all(tr.powers >= 0) and tr.clock == "virtual"

    def test_uncore_is_difference(self, sim):
        sim.set_load(0.7)
        t = sim.sample_trace(["package-1", "core-1", "uncore-1"], 2.0)
        diff = t["package-1"].powers - t["core-1"].powers
        np.testing.assert_allclose(t["uncore-1"].powers, np.maximum(diff, 0), atol=1e-9)
        assert t["uncore-1"].clamped < 0.001 * len(diff) + 1

    def test_constant_trace(self, flat_profile):
        b = SimBackend(flat_profile)
        p = b.sample_trace(["package"], 2.0)["package"].powers
        assert p.max() - p.min() <= 2 * b.capabilities.units.energy_unit / 0.05 * 2

    def test_spikes_visible(self, specpower):
        b = SimBackend(specpower, seed=1)
        b.set_load(0.5)
        p = b.sample_trace(["package"], 30.0)["package"].powers
        assert p.max() > np.quantile(p, 0.95)

    def test_limit_during_trace(self, specpower):
        b = SimBackend(specpower, seed=1)
        b.set_load(1.0)

        def control(i, t):
            if i == 19:
                b.set_limit(CORE0, PowerLimit(10.0, 1 / 1024))

        t = b.sample_trace(["core-0"], 2.0, on_sample=control)["core-0"].powers
        assert t[:20].min() > 20.0
        assert t[20:].max() <= 10.0 + 0.2

    def test_concurrent_controller(self, specpower):
        b = SimBackend(specpower, seed=1)
        b.set_load(1.0)
        done = threading.Event()

        def controller():
            b.set_limit(CORE0, PowerLimit(10.0, 1 / 1024))
            done.set()

        th = threading.Thread(target=controller)
        th.start()
        b.sample_trace(["core-0"], 1.0)
        th.join()
        assert done.is_set() and b.get_limit(CORE0).bound == 10.0

    def test_resolution_floor(self, sim):
        with pytest.raises(ValueError):
            sim.sample_trace(["package"], 1.0, resolution=0.0005)

    def test_csv_roundtrip(self, sim, tmp_path):
        sim.set_load(0.3)
        traces = sim.sample_trace(["package", "dram"], 1.0)
        path = tmp_path / "t.csv"
        write_traces_csv(traces.values(), path)
        assert path.read_text().splitlines()[0] == "timestamp_s,domain,power_w"
        back = read_traces_csv(path)
        np.testing.assert_array_equal(back["dram"].powers, traces["dram"].powers)
        np.testing.assert_array_equal(back["package"].timestamps, traces["package"].timestamps)


class TestMsr:
    def test_probe(self, msr_tree):
        b = MsrBackend()
        caps = b.capabilities
        assert not caps.is_simulated and caps.sockets == 2
        assert caps.units.power_unit == 0.125
        assert caps.power_info[PKG0].max_power == 180.0
        assert b.cpus == {0: 0, 1: 2}

    def test_read_energy(self, msr_tree):
        b = MsrBackend()
        assert b.read_energy(PKG0).raw_counter == 0xFFFFFF00

    def test_wrap_across_file_update(self, msr_tree):
        b = MsrBackend()
        r0 = b.read_energy(PKG0)
        with open(msr_tree / "0" / "msr", "r+b") as fh:
            fh.seek(0x611 * 8)
            fh.write((0x100).to_bytes(8, "little"))
        r1 = b.read_energy(PKG0)
        assert energy_delta(r0, r1, b.capabilities.units) == 512 * b.capabilities.units.energy_unit

    def test_write_read_modify_write(self, msr_tree):
        with open(msr_tree / "2" / "msr", "r+b") as fh:
            fh.seek(0x618 * 8)
            fh.write(((0x5A << 32) | 0x1234).to_bytes(8, "little"))
        b = MsrBackend()
        raw = b.set_limit(DomainId(DomainKind.DRAM, 1), PowerLimit(20.0, 1 / 1024, True, True))
        assert raw >> 32 == 0x5A and raw & 0x7FFF == 160
        assert b.get_limit(DomainId(DomainKind.DRAM, 1)) == PowerLimit(20.0, 1 / 1024, True, True)
        b.clear_limit(DomainId(DomainKind.DRAM, 1))
        assert not b.get_limit(DomainId(DomainKind.DRAM, 1)).enabled

    def test_dry_run_prints(self, msr_tree):
        out = io.StringIO()
        b = MsrBackend(dry_run=True, out=out)
        b.set_limit(CORE0, PowerLimit(20.0, 1 / 1024))
        line = out.getvalue()
        assert "0x638" in line and "0x00000000000080a0" in line and "20.000 W" in line
        assert not b.get_limit(CORE0).enabled

    def test_full_system_unavailable(self, msr_tree):
        with pytest.raises(DomainUnavailable):
            MsrBackend().sample_trace(["full_system"], 0.1, 0.05)

    def test_cannot_run_levels(self, msr_tree):
        from raplprop.errors import BackendFailure

        with pytest.raises(BackendFailure):
            MsrBackend().run_level(0.5, 10.0)

    def test_missing_tree(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RAPLPROP_MSR_ROOT", str(tmp_path / "nope"))
        with pytest.raises(DomainUnavailable):
            MsrBackend()

    def test_permission(self, msr_tree):
        import os

        if os.geteuid() == 0:
            pytest.skip("root ignores file permissions")
        (msr_tree / "0" / "msr").chmod(0)
        with pytest.raises(PermissionDenied):
            MsrBackend()

    def test_unreadable_dry_run_falls_back(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RAPLPROP_MSR_ROOT", str(tmp_path / "nope"))
        out = io.StringIO()
        b = MsrBackend(dry_run=True, out=out)
        assert "power-on defaults" in out.getvalue()
        b.set_limit(DRAM0, PowerLimit(20.0, 1 / 1024))
        assert "0x618" in out.getvalue()

    def test_real_time_trace(self, msr_tree):
        t = MsrBackend().sample_trace(["package-0"], 0.02, 0.01)["package-0"]
        assert t.clock == "monotonic" and len(t) == 2
