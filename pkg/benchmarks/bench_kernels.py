"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--nodes 2000] [--degree 8] [--width 64] [--repeat 5]

Both backends are checked for identical results before timing. A full training
epoch on the default SBM is timed under each backend in a subprocess, since the
backend is chosen once at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from graph_decipher import _pykernels

try:
    from graph_decipher import _ckernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

EPOCH_SNIPPET = """
import time
from graph_decipher.graph import SbmSpec, generate_sbm, make_split
from graph_decipher.model import GraphContext, ModelConfig
from graph_decipher.train import train
ds = generate_sbm(SbmSpec(n_per_class={n}))
split = make_split(ds.labels, 20, 30, 0, 0)
ctx = GraphContext.build(ds, split)
cfg = ModelConfig(epochs=3, patience=3)
train(ctx, split, ModelConfig(epochs=1))
t = time.perf_counter()
train(ctx, split, cfg)
print((time.perf_counter() - t) / 3)
"""


def workload(n, degree, width, seed=0):
    rng = np.random.default_rng(seed)
    deg = rng.integers(1, 2 * degree, size=n)
    indptr = np.r_[0, np.cumsum(deg)].astype(np.int64)
    indices = rng.integers(0, n, size=indptr[-1]).astype(np.int64)
    m = max(4, n // 10)
    k = int(np.ceil(np.sqrt(m)))
    return {
        "rowstable_matmul": (rng.normal(size=(n, width)), rng.normal(size=(width, width))),
        "segment_softmax": (rng.normal(size=indptr[-1]), indptr),
        "segment_weighted_sum": (rng.random(indptr[-1]), rng.normal(size=(n, width)), indices, indptr),
        "max_pool_argmax": (rng.random((m, width)), k, 2),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b) or np.allclose(a, b, rtol=1e-15, atol=0)


def epoch_time(backend, n):
    env = {**os.environ, "GD_PURE_PYTHON": "1" if backend == "python" else "0"}
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--degree", type=int, default=8)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epoch-nodes", type=int, default=60, help="SBM nodes per class for the epoch timing")
    args = ap.parse_args()

    print(f"{'kernel':<22}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, call_args in workload(args.nodes, args.degree, args.width).items():
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        if not same(py(*call_args), cy(*call_args)):
            sys.exit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: py(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: cy(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.1f}x")

    t_py, t_cy = epoch_time("python", args.epoch_nodes), epoch_time("cython", args.epoch_nodes)
    print(f"{'training epoch':<22}{t_py * 1e3:>12.1f}{t_cy * 1e3:>12.1f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
