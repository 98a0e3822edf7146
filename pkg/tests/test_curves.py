import json

import numpy as np
import pytest

from raplprop.errors import Infeasible, SchemaError
from raplprop.metrics import PowerCurve, ep_metric
from raplprop.node_model import (
    SubsystemCurve,
    WorkloadKind,
    calibrate_gamma,
    curve_from_targets,
    fit_residual,
    load_profile,
    mean_power,
    profile_from_dict,
    profile_to_dict,
)


def dense_ep(curve, n=10001):
    u = np.linspace(0, 1, n)
    return ep_metric(PowerCurve("x", u, mean_power(curve, u)))


class TestGamma:
    def test_identity(self):
        assert calibrate_gamma(0.0, 1.0) == 1.0

    def test_specpower_full(self):
        assert calibrate_gamma(0.3651, 0.54) == pytest.approx(0.7399, abs=1e-4)

    def test_specweb_full(self):
        assert calibrate_gamma(0.5488, 0.29) == pytest.approx(0.4735, abs=1e-4)

    @pytest.mark.parametrize("a,ep", [(0.5, 1.0), (0.5, 1.2), (0.2, 0.0), (0.2, -0.1)])
    def test_infeasible(self, a, ep):
        with pytest.raises(Infeasible):
            calibrate_gamma(a, ep)

    @pytest.mark.parametrize("a,ep", [(0.0, 0.3), (0.3651, 0.54), (0.9413, 0.02), (0.1, 1.7)])
    def test_continuous_ep_exact(self, a, ep):
        c = curve_from_targets(10.0, a, ep)
        assert c.continuous_ep() == pytest.approx(ep, abs=1e-12)
        assert dense_ep(c, 100001) == pytest.approx(ep, abs=1e-5)


class TestMeanPower:
    full = curve_from_targets(330.0, 0.3651, 0.54)

    def test_idle(self):
        assert mean_power(self.full, 0.0) == pytest.approx(120.48, abs=0.01)

    def test_peak(self):
        assert mean_power(self.full, 1.0) == 330.0

    def test_half(self):
        assert mean_power(self.full, 0.5) == pytest.approx(245.9, abs=0.5)
        assert mean_power(self.full, 0.5) == pytest.approx(330 * (0.3651 + 0.6349 * 0.5 ** self.full.gamma))

    def test_vector(self):
        out = mean_power(self.full, np.array([0.0, 1.0]))
        assert out.tolist() == [mean_power(self.full, 0.0), 330.0]

    def test_range(self):
        with pytest.raises(ValueError):
            mean_power(self.full, 1.2)

    def test_concave_below_one(self):
        u = np.linspace(0, 1, 101)
        chord = 0.3651 + 0.6349 * u
        assert np.all(mean_power(self.full, u) / 330 >= chord - 1e-12)


class TestResidual:
    def test_hits_targets(self, specpower):
        c = specpower.curves
        total = [c["package"], c["dram"], c["rest_of_system"]]
        assert sum(x.peak_power for x in total) == pytest.approx(330.0)
        assert sum(x.idle_power for x in total) == pytest.approx(330.0 * 0.3651)
        area = sum(x.peak_power * x.area_fraction() for x in total)
        assert 2 - 2 * area / 330.0 == pytest.approx(0.54, abs=1e-12)

    def test_no_room(self):
        with pytest.raises(Infeasible):
            fit_residual([SubsystemCurve(100.0, 0.5)], 90.0, 0.5, 0.5)


class TestProfiles:
    def test_builtins(self, specpower, specweb):
        assert specpower.kind is WorkloadKind.THROUGHPUT and specpower.max_performance == 1_120_000
        assert specweb.kind is WorkloadKind.SESSION and specweb.max_performance == 13_000
        assert specweb.base_latency == 1.0
        assert specpower.sockets == 2

    def test_full_system_wattage(self, specpower, specweb):
        assert specpower.subject_mean("full_system", 0.0) == pytest.approx(120.5, abs=0.1)
        assert specpower.subject_mean("full_system", 1.0) == pytest.approx(330.0)
        assert specweb.subject_mean("full_system", 1.0) == pytest.approx(219.0)

    def test_additivity(self, specpower):
        u = np.linspace(0, 1, 11)
        parts = sum(specpower.subject_mean(k, u) for k in ("package", "dram")) + mean_power(
            specpower.curves["rest_of_system"], u
        )
        assert np.allclose(specpower.subject_mean("full_system", u), parts)

    def test_uncore_idle_consistent(self, specpower, specweb):
        for p in (specpower, specweb):
            ref = p.reference["uncore"].idle_pct
            idle = p.subject_mean("uncore", 0.0) / p.subject_mean("uncore", 1.0) * 100
            assert idle == pytest.approx(ref, abs=1e-3)

    def test_roundtrip(self, specweb):
        again = profile_from_dict(json.loads(json.dumps(profile_to_dict(specweb))))
        assert again == specweb

    def test_noise_override(self, specpower):
        assert specpower.noise_for("dram") < specpower.noise_for("core")
        assert specpower.noise_for("uncore") == specpower.noise_for("package")
        flat = specpower.with_fluctuations(noise_cv=0.0)
        assert flat.noise_for("dram") == 0.0

    def test_missing_field(self):
        with pytest.raises(SchemaError) as err:
            profile_from_dict({"name": "x", "kind": "throughput", "curves": {}})
        assert err.value.field == "max_performance"

    def test_unknown_name(self):
        with pytest.raises(SchemaError):
            load_profile("no-such-profile")

    def test_file_schema(self, tmp_path):
        bad = tmp_path / "p.json"
        bad.write_text(json.dumps({"name": "p", "kind": "batch", "max_performance": 1, "curves": {}}))
        with pytest.raises(SchemaError):
            load_profile(bad)

    def test_session_needs_latency(self):
        doc = {
            "name": "s", "kind": "session", "max_performance": 10,
            "curves": {k: {"peak_w": 10 + i, "idle_fraction": 0.1, "gamma": 1.0}
                       for i, k in enumerate(("core", "package", "dram", "rest_of_system"))},
        }
        with pytest.raises(SchemaError):
            profile_from_dict(doc)
