"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--n 5000] [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` time for each
backend, the speedup, and the largest absolute output difference.
"""
import argparse
import time
import timeit

import numpy as np

from m5quant.data import drop_missing_proteins
from m5quant.gibbs import ChainConfig, GibbsSampler
from m5quant.kernels import available_backends, load_backend
from m5quant.rng import TAG_IMPUTE, element_keys
from m5quant.simgen import SimulationConfig, generate_dataset


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(n, rng):
    keys = element_keys(1, TAG_IMPUTE, np.arange(n, dtype=np.uint64))
    mu = rng.normal(18.5, 3.0, n)
    y = rng.normal(18.5, 3.0, n)
    r = (rng.random(n) < 0.5 + 0.4 * np.tanh(y - 18.5)).astype(np.uint8)
    return {
        "std_normals": lambda k: k.std_normals(keys, 7),
        "esn_impute (high acceptance)": lambda k: k.esn_impute(mu, 0.3, -9.0, 0.5, keys, 7),
        "esn_impute (tail path)": lambda k: k.esn_impute(mu + 40.0, 0.3, -9.0, 0.5, keys, 7),
        "probit_stats": lambda k: np.array(k.probit_stats(y, r, -9.0, 0.5)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--proteins", type=int, default=200)
    ap.add_argument("--sweeps", type=int, default=50)
    args = ap.parse_args()

    names = available_backends()
    if "cython" not in names:
        print("compiled backend not built; only the Python fallback is available")
    backends = {name: load_backend(name) for name in names}
    print(f"{'kernel':<30}" + "".join(f"{n + ' (ms)':>14}" for n in backends) + f"{'speedup':>10}{'max |diff|':>12}")

    for label, fn in kernel_cases(args.n, np.random.default_rng(0)).items():
        times = {n: best(lambda k=k: fn(k), args.repeat) for n, k in backends.items()}
        outs = {n: fn(k) for n, k in backends.items()}
        line = f"{label:<30}" + "".join(f"{1e3 * t:14.3f}" for t in times.values())
        if len(backends) == 2:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
            line += f"{times['python'] / times['cython']:10.1f}{diff:12.2e}"
        print(line)

    cfg = SimulationConfig(n_proteins=args.proteins, seed=1)
    ds = drop_missing_proteins(generate_dataset(cfg, np.random.default_rng(1))[0])
    chain = ChainConfig(n_iterations=args.sweeps + 1, burn_in=0, seed=3, heartbeat=0)
    times, finals = {}, {}
    for n, k in backends.items():
        g = GibbsSampler(ds, chain, backend=k)
        t0 = time.perf_counter()
        for it in range(args.sweeps):
            g.sweep(it)
        times[n] = (time.perf_counter() - t0) / args.sweeps
        finals[n] = g.state.mu
    line = f"{'full sweep (' + str(args.proteins) + ' proteins)':<30}" + "".join(
        f"{1e3 * t:14.3f}" for t in times.values())
    if len(backends) == 2:
        diff = float(np.max(np.abs(finals["cython"] - finals["python"])))
        line += f"{times['python'] / times['cython']:10.1f}{diff:12.2e}"
    print(line)


if __name__ == "__main__":
    main()
