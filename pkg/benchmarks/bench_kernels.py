"""Compiled kernels against their numpy fallbacks.

Usage::

    python3 benchmarks/bench_kernels.py [--n 100000] [--repeat 5]

Each kernel is timed on identical inputs for every available backend, and
an end-to-end multi-shift CG solve is timed in a subprocess per backend
(the backend is fixed at import time).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from detfree import _backend
from detfree.models import random_precision_factors, spatial_bins

_SOLVE = """
import json, sys, time
import numpy as np
from detfree import _backend
from detfree.models import RandomPrecisionModel, random_precision_factors
from detfree.rational import apply_invsqrt, auto_order, build_invsqrt_quadrature
n = int(sys.argv[1])
f = random_precision_factors(n, 0)
m = RandomPrecisionModel(f.Q, np.zeros(n), f)
theta = np.array([-3.0])
b = m.precision_bounds(theta)
q = build_invsqrt_quadrature(b, auto_order(b))
w = np.random.default_rng(1).standard_normal(n)
op = m.precision_operator(theta)
best = float("inf")
for _ in range(3):
    t = time.perf_counter()
    apply_invsqrt(op, w, q)
    best = min(best, time.perf_counter() - t)
print(json.dumps({"backend": _backend.BACKEND, "N": q.N, "seconds": best}))
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(n, rng):
    f = random_precision_factors(n, 0)
    Q = f.Q.to_scipy()
    indptr, indices = Q.indptr.astype(np.int64), Q.indices.astype(np.int64)
    x = rng.standard_normal(n)
    out = np.empty(n)

    k = 20
    X, P = rng.standard_normal((k, n)), rng.standard_normal((k, n))
    r = rng.standard_normal(n)
    coef = rng.uniform(0.1, 1.0, (3, k))
    active = np.ones(k, dtype=bool)

    n_pts = min(n, 20_000)
    pts = rng.uniform(0, 1, (n_pts, 2))
    l = 0.02
    bins = spatial_bins(pts, l)

    return {
        "csr_matvec": lambda impl: impl.csr_matvec(indptr, indices, Q.data, x, out, 1),
        "multishift_update": lambda impl: impl.multishift_update(X, P, r, *coef, active),
        "givens_apply": lambda impl: impl.givens_apply(x.copy(), f.rot_i, f.rot_j, f.cos, f.sin),
        f"wendland_pairs[{n_pts}]": lambda impl: impl.wendland_pairs(pts, *bins, l, 1.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    impls = _backend.implementations()
    if "compiled" not in impls:
        print("compiled extension not built; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"kernels at n={args.n} (best of {args.repeat}, milliseconds)")
    print(f"{'kernel':<24}" + "".join(f"{k:>12}" for k in impls) + f"{'speedup':>10}")
    for name, case in kernel_cases(args.n, rng).items():
        t = {k: 1e3 * best_of(lambda: case(impl), args.repeat) for k, impl in impls.items()}
        speed = t["python"] / t["compiled"] if "compiled" in t else float("nan")
        print(f"{name:<24}" + "".join(f"{v:>12.3f}" for v in t.values()) + f"{speed:>10.1f}")

    print(f"\nmulti-shift CG inverse square root at n={args.n}")
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("DETFREE_PURE_PYTHON", None)
        if pure:
            env["DETFREE_PURE_PYTHON"] = "1"
        res = subprocess.run([sys.executable, "-c", _SOLVE, str(args.n)], env=env,
                             capture_output=True, text=True, check=True)
        out = json.loads(res.stdout)
        print(f"{out['backend']:<10} N={out['N']:<3} {1e3 * out['seconds']:10.1f} ms")


if __name__ == "__main__":
    main()
