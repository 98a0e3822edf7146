import os
from pathlib import Path

import pytest

from raplprop.backend import SimBackend, default_register_file
from raplprop.node_model import load_profile


@pytest.fixture(scope="session")
def specpower():
    return load_profile("specpower-2012")


@pytest.fixture(scope="session")
def specweb():
    return load_profile("specweb-ecommerce")


@pytest.fixture
def quiet(specpower):
    """Noise- and spike-free SPECpower node."""
    return specpower.with_fluctuations(noise_cv=0.0, spike_prob=0.0)


@pytest.fixture
def sim(specpower):
    return SimBackend(specpower, seed=0)


def write_msr_tree(root: Path, registers: dict, cpus_per_socket: int = 2, sysfs: Path | None = None):
    """Fake /dev/cpu tree: one sparse 'msr' file per CPU, register ``a`` at byte ``8 * a``."""
    sockets = sorted({s for s, _ in registers})
    cpu = 0
    for s in sockets:
        for _ in range(cpus_per_socket):
            d = root / str(cpu)
            d.mkdir(parents=True)
            with open(d / "msr", "wb") as fh:
                fh.truncate(0x700 * 8)
                for (sock, addr), value in registers.items():
                    if sock == s:
                        fh.seek(addr * 8)
                        fh.write(int(value).to_bytes(8, "little"))
            if sysfs is not None:
                topo = sysfs / f"cpu{cpu}" / "topology"
                topo.mkdir(parents=True)
                (topo / "physical_package_id").write_text(f"{s}\n")
            cpu += 1
    return root


@pytest.fixture
def msr_tree(tmp_path, monkeypatch):
    regs = default_register_file(2)
    # Energy counters near the wrap point on package-0.
    regs[(0, 0x611)] = 0xFFFFFF00
    regs[(0, 0x639)] = 0x1000
    regs[(0, 0x619)] = 0x2000
    regs[(1, 0x611)] = 0x3000
    regs[(1, 0x639)] = 0x1000
    regs[(1, 0x619)] = 0x2000
    root = write_msr_tree(tmp_path / "cpu", regs, sysfs=tmp_path / "sys")
    monkeypatch.setenv("RAPLPROP_MSR_ROOT", str(root))
    monkeypatch.setenv("RAPLPROP_SYSFS_CPU", str(tmp_path / "sys"))
    return root
