"""Compare the compiled and pure-Python kernels on typical workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from groupbias.estimator import Grid
from groupbias.kernels import _pykernels

try:
    from groupbias.kernels import _ckernels
except ImportError:
    _ckernels = None


def workloads(rng):
    a = np.sort(rng.random(2000) * 0.8)
    b = np.sort(rng.random(2000))
    scales = np.ascontiguousarray(Grid().points())
    sizes = np.full(16, 20)
    qptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    scores = rng.normal(size=qptr[-1])
    labels = rng.random(qptr[-1])
    return {
        "ks_gap_grid (2000 x 2000, 191 points)": lambda k: k.ks_gap_grid(a, b, scales),
        "lambda_gradients (16 queries x 20 items)": lambda k: k.lambda_gradients(scores, labels, qptr, 10, True),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"{'workload':44s} " + " ".join(f"{name:>12s}" for name in backends) + "    speedup")
    for name, fn in workloads(np.random.default_rng(0)).items():
        results = [fn(k) for k in backends.values()]
        for r in results[1:]:
            np.testing.assert_allclose(r, results[0], rtol=1e-10, atol=1e-12)
        times = [min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) for k in backends.values()]
        speedup = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{name:44s} " + " ".join(f"{t * 1e3:10.3f}ms" for t in times) + "   " + speedup)


if __name__ == "__main__":
    main()
