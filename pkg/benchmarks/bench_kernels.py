"""Time the hot kernels with numba and with the pure-numpy fallback.

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --single   # current backend only

The fallback is selected with TREEVIMP_DISABLE_NUMBA=1, so each backend
runs in its own interpreter.  Kernels are warmed up once before timing.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_single(repeat: int) -> dict:
    from treevimp import _accel
    from treevimp.forest import ForestConfig, grow_forest
    from treevimp.noising import NoisingMode, sample_terminal_nodes
    from treevimp.tree import Dataset, GrowConfig, best_split, grow_tree

    rng = np.random.default_rng(0)
    X = rng.random((500, 6))
    y = 10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 5 * X[:, 2] + rng.normal(size=500)
    data = Dataset(X, y)
    small = Dataset(X[:70], y[:70])
    tree = grow_tree(data, GrowConfig(min_node_size=2))
    forest = grow_forest(small, ForestConfig(num_trees=50, mtry=3, min_node_size=5))
    Xt = rng.random((2000, 6))
    timings = {
        "best_split n=500 d=6": _time(lambda: best_split(data), repeat),
        "grow_tree n=500 d=6": _time(lambda: grow_tree(data, GrowConfig(min_node_size=2)), repeat),
        "grow_forest B=50 n=70": _time(lambda: grow_forest(small, ForestConfig(num_trees=50, mtry=3)), repeat),
        "forest predict 2000 rows": _time(lambda: forest.predict(Xt), repeat),
        "noised walks 200 x 2000": _time(lambda: sample_terminal_nodes(
            tree, Xt, 0, NoisingMode.FULL_RANDOM, np.random.default_rng(1), 200), repeat),
    }
    return {"backend": _accel.backend(), "seconds": timings}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--single", action="store_true", help="time the current backend and print JSON")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if args.single:
        print(json.dumps(run_single(args.repeat)))
        return
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, TREEVIMP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--single", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["seconds"]
    fast, slow = results.get("numba"), results["numpy"]
    print(f"{'kernel':28s} {'numba (ms)':>12s} {'numpy (ms)':>12s} {'speedup':>9s}")
    for name, t in slow.items():
        f = fast[name] if fast else float("nan")
        print(f"{name:28s} {1e3 * f:12.2f} {1e3 * t:12.2f} {t / f:8.1f}x")


if __name__ == "__main__":
    main()
