"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from xrsim import kernels


def cases(rng):
    X, Y = rng.standard_normal((256, 8)), rng.standard_normal((256, 8))
    sig, alp = np.array([0.5, 1.0, 2.0]), np.full(3, 1 / 3)
    C = rng.standard_normal((256, 256))
    # 55 dims, ~6 samples each over a 200 ms slot window
    J, cap = 55, 64
    counts = rng.integers(1, cap, J)
    times = np.sort(rng.uniform(0, 1.0, (J, cap)), axis=1)
    vals = rng.standard_normal((J, cap))
    init = np.zeros(J)
    inst = np.linspace(0, 1.0, 120)
    return {
        "gmm_gram 256x256x8": lambda b: kernels.gmm_gram(X, Y, sig, alp, backend=b),
        "gmm_gram_grad 256x256x8": lambda b: kernels.gmm_gram_grad(X, Y, sig, alp, C, backend=b),
        "causal_interp zoh 55x120": lambda b: kernels.causal_interp(times, vals, counts, init, inst, kernels.ZOH, backend=b),
        "causal_interp linear 55x120": lambda b: kernels.causal_interp(times, vals, counts, init, inst, kernels.LINEAR, backend=b),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if kernels._ext is not None else [])
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<30}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        ms = {}
        for b in backends:
            fn(b)  # warm
            ms[b] = 1e3 * min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat))
        if len(backends) == 2:
            ref, fast = fn("python"), fn("cython")
            assert np.allclose(ref, fast, rtol=1e-10, atol=1e-12), name
        speed = f"{ms['python'] / ms['cython']:.1f}x" if "cython" in ms else "-"
        print(f"{name:<30}" + "".join(f"{ms[b]:>12.3f}" for b in backends) + f"{speed:>10}")


if __name__ == "__main__":
    main()
