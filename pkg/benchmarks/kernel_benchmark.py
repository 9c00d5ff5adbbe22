"""Throughput comparison of the two stepping kernels.

Runs the same workloads through the pure-Python and the compiled backend
and reports steps per second. Invoke from the repository root:

    python3 benchmarks/kernel_benchmark.py [--paths N] [--dt DT]
"""

import argparse
import time

import numpy as np

from tplab._core import available_backends
from tplab.integrator import sample_tpp_ensemble, simulate_langevin
from tplab.model import RegionGeometry, make_double_well_1d
from tplab.oracle import exact_committor_1d


def time_tpp(backend, n_paths, dt, pot, orc, geo):
    t0 = time.perf_counter()
    ens = sample_tpp_ensemble(
        pot, orc, n_paths, dt, 2024, geometry=geo, backend=backend
    )
    elapsed = time.perf_counter() - t0
    steps = int(np.sum([r.tau_index for r in ens.records]))
    return steps, elapsed


def time_langevin(backend, n_steps, dt, pot):
    t0 = time.perf_counter()
    simulate_langevin(pot, -1.0, dt, n_steps, seed=2024, backend=backend)
    return n_steps, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--dt", type=float, default=1e-4)
    ap.add_argument("--langevin-steps", type=int, default=2_000_000)
    args = ap.parse_args()

    pot = make_double_well_1d()
    geo = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
    orc = exact_committor_1d(pot, geo)
    backends = available_backends()

    print("workload            backend    steps        time      steps/s")
    rates = {}
    for backend in backends:
        steps, dt_el = time_tpp(backend, args.paths, args.dt, pot, orc, geo)
        rates[("tpp", backend)] = steps / dt_el
        print(
            "tpp (oracle drive)  %-9s %9d  %8.2fs  %11.0f"
            % (backend, steps, dt_el, steps / dt_el)
        )
    for backend in backends:
        steps, dt_el = time_langevin(backend, args.langevin_steps, 5e-3, pot)
        rates[("lan", backend)] = steps / dt_el
        print(
            "plain langevin      %-9s %9d  %8.2fs  %11.0f"
            % (backend, steps, dt_el, steps / dt_el)
        )
    if "compiled" in backends:
        for name, label in (("tpp", "tpp"), ("lan", "langevin")):
            ratio = rates[(name, "compiled")] / rates[(name, "python")]
            print("%s speedup: %.0fx" % (label, ratio))


if __name__ == "__main__":
    main()
