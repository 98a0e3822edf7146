"""Time the compiled cap-enforcement kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--ticks N] [--repeat R]

Both implementations run on identical inputs; their outputs are checked for
agreement before timings are reported.
"""

import argparse
import sys
import timeit

import numpy as np

from raplprop import _kernels_py

try:
    from raplprop import _kernels as _compiled
except ImportError:
    _compiled = None


def workload(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    core = np.maximum(35.0 * (1 + 0.05 * rng.standard_normal(n)), 0.0)
    spikes = rng.random(n) < 0.01
    core[spikes] = 60.0
    uncore = np.full(n, 20.0)
    return core, uncore


def cases(n: int):
    core, uncore = workload(n)
    # 47 ticks covers the longest package window; caps bite on the spikes.
    return {
        "single w=1": lambda m: m.enforce_single(core, 34.0, 1, np.zeros(64)),
        "single w=47": lambda m: m.enforce_single(core, 34.0, 47, np.zeros(64)),
        "nested w=1/1": lambda m: m.enforce_nested(core, uncore, 34.0, 1, 55.0, 1, np.zeros(64), np.zeros(64)),
        "nested w=8/47": lambda m: m.enforce_nested(core, uncore, 34.0, 8, 55.0, 47, np.zeros(64), np.zeros(64)),
    }


def agree(a, b) -> bool:
    return all(np.allclose(x, y, rtol=1e-12, atol=1e-12) for x, y in zip(a, b))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ticks", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{args.ticks} ticks per call, best of {args.repeat}")
    print(f"{'case':<16}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases(args.ticks).items():
        if not agree(fn(_kernels_py), fn(_compiled)):
            print(f"{name}: implementations disagree", file=sys.stderr)
            return 2
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(_compiled), number=1, repeat=args.repeat))
        print(f"{name:<16}{t_py * 1e3:>12.2f}{t_c * 1e3:>14.3f}{t_py / t_c:>9.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
