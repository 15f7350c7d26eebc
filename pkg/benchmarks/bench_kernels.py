"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Also times a whole forest fit under each backend by reloading the package
with OVMORPH_KERNELS set.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ovmorph import kernels
from ovmorph.fixtures import disc_coords


def split_case(n=2000, d=20, c=3):
    gen = np.random.default_rng(0)
    X = np.ascontiguousarray(gen.normal(size=(n, d)))
    y = gen.integers(0, c, size=n).astype(np.intp)
    idx = np.arange(n, dtype=np.intp)
    feats = np.arange(d, dtype=np.intp)
    return lambda k: k.best_split(X, y, idx, feats, c, 1)


def apply_case(n=20000, depth=10):
    gen = np.random.default_rng(1)
    n_internal = 2 ** depth - 1
    n_nodes = 2 * n_internal + 1
    feature = np.full(n_nodes, -1, dtype=np.intp)
    feature[:n_internal] = gen.integers(0, 5, size=n_internal)
    threshold = gen.normal(size=n_nodes)
    left = np.full(n_nodes, -1, dtype=np.intp)
    right = np.full(n_nodes, -1, dtype=np.intp)
    left[:n_internal] = 2 * np.arange(n_internal) + 1
    right[:n_internal] = 2 * np.arange(n_internal) + 2
    X = np.ascontiguousarray(gen.normal(size=(n, 5)))
    return lambda k: k.apply_tree(X, feature, threshold, left, right)


def contour_case(radius=40):
    d = disc_coords(radius, (radius + 1, radius + 1))
    img = np.zeros((2 * radius + 3,) * 2, dtype=np.uint8)
    img[d[:, 0], d[:, 1]] = 1
    return lambda k: k.contour_steps(img)


FOREST_SNIPPET = """
import time
import numpy as np
from ovmorph.forest import ForestHyperparams, train_forest
gen = np.random.default_rng(0)
X = gen.normal(size=(600, 12)); y = (X[:, 0] + 0.5 * gen.normal(size=600) > 0).astype(int)
t = time.perf_counter()
train_forest(X, y, ForestHyperparams(n_trees=50, seed=0))
print(time.perf_counter() - t)
"""


def forest_time(backend):
    env = dict(os.environ, OVMORPH_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", FOREST_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.backends()
    cases = {"best_split": split_case(), "apply_tree": apply_case(), "contour_steps": contour_case()}
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for b, k in backends.items()}
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<16}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + f"{ratio:>9.1f}x")
    if "cython" in backends:
        fp, fc = forest_time("python"), forest_time("cython")
        print(f"{'forest fit':<16}{fp * 1e3:>10.1f}ms{fc * 1e3:>10.1f}ms{fp / fc:>9.1f}x")


if __name__ == "__main__":
    main()
