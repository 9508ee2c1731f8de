"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import sys
import timeit
from pathlib import Path

import numpy as np

from d2dfl._kernels import get_backend
from d2dfl.offload import ObjectiveWeights, build_problem
from d2dfl.offload.state import OptState
from d2dfl.simulation import InstanceConfig, build_instance

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from helpers import three_device_instance  # noqa: E402


def cases():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 8))
    init = X[rng.choice(400, 6, replace=False)]
    small = build_problem(*three_device_instance(0))
    inst = build_instance(InstanceConfig(n=60, link_prob=0.15, seed=0))
    x = np.zeros(inst.n, bool)
    x[np.argsort(-inst.data_sizes)[:5]] = True
    big = build_problem(OptState.from_counts(inst.cluster_counts(), 2.0), x, inst.similarity,
                        inst.profiles, inst.topology, ObjectiveWeights())
    z = rng.uniform(-0.5, 1.5, big.n_vars)
    return {
        "lloyd 400x8 k=6": lambda k: k.lloyd(X, init, 100, 1e-10),
        "project (N=60)": lambda k: k.project(z, big.a, big.recv, big.cap, big.e, big.send, big.budget),
        "pgd_solve (3 devices)": lambda k: k.pgd_solve(*small.kernel_args(), np.zeros(small.n_vars), 500, 1e-12),
        f"pgd_solve (N=60, {big.n_vars} vars)": lambda k: k.pgd_solve(*big.kernel_args(), np.zeros(big.n_vars),
                                                                      500, 1e-12),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": get_backend("python")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases().items():
        times = {}
        for b, mod in backends.items():
            number = 3
            times[b] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = f"{name:32s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if len(times) == 2:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
