"""Per-run replay cost of the compiled kernel versus the pure-Python fallback.

    python3 benchmarks/bench_backends.py [--runs 20] [--vehicles 2] [--scenario parallel]

Each timing covers one full simulate() call (truth, events and replay of every
algorithm); only the replay differs between backends.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from colloc import backend, engine
from colloc.scenarios import KINDS, default_scenario


def time_backend(cfg, name: str, runs: int, algos) -> np.ndarray:
    times = []
    for seed in range(runs):
        t0 = time.perf_counter()
        engine.simulate(cfg, seed, algos, backend=name)
        times.append(time.perf_counter() - t0)
    return np.array(times)


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--vehicles", type=int, default=2)
    p.add_argument("--scenario", choices=KINDS, default="parallel")
    p.add_argument("--algos", default="ekf,dcl,ccl")
    args = p.parse_args(argv)

    cfg = default_scenario(args.scenario, n_vehicles=args.vehicles)
    algos = engine.parse_algos(args.algos)
    print(f"{args.scenario}, {args.vehicles} vehicles, {cfg.n_ticks} ticks, algos {','.join(algos)}")
    results = {}
    for name in sorted(backend.BACKENDS):
        t = time_backend(cfg, name, args.runs, algos)
        results[name] = np.median(t)
        print(f"{name:>8}: median {np.median(t) * 1e3:9.1f} ms/run  (min {t.min() * 1e3:.1f})")
    if {"cython", "python"} <= results.keys():
        print(f" speedup: {results['python'] / results['cython']:.1f}x")


if __name__ == "__main__":
    main()
