import importlib.util
from pathlib import Path

import pytest

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs(capsys):
    pytest.importorskip("raplprop._kernels")
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    assert mod.main(["--ticks", "2000", "--repeat", "1"]) == 0
    assert "nested w=8/47" in capsys.readouterr().out
