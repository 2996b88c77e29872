"""Numba versus pure-numpy timing of the plant kernels.

Each path runs in its own interpreter because ``PCS_MPC_DISABLE_NUMBA`` is
read at import time::

    python benchmarks/bench_kernels.py            # both paths, summary table
    python benchmarks/bench_kernels.py --worker   # one path, honours the env flag
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _inputs():
    from pcs_mpc.plant import PlantParameters, _tables

    params = PlantParameters()
    T_m, h_m, T_f, h_f = _tables(params)
    href_sh, href_dhw = params.h_ref()
    g = params.geometry
    return params, (T_m, h_m, T_f, h_f), (g.m_sh, g.m_dhw, href_sh, href_dhw)


def run_worker(n_inner: int, n_lookup: int, repeats: int) -> dict:
    from pcs_mpc import kernels as K
    from pcs_mpc._jit import NUMBA_ENABLED
    from pcs_mpc.pcs import temperature_to_enthalpy

    params, tables, geom = _inputs()
    h0 = temperature_to_enthalpy(30.0, "freezing", params.props)
    h1 = temperature_to_enthalpy(55.0, "melting", params.props)
    out = np.zeros((n_inner, K.N_COLS))

    def zones():
        # alternating heat pump so both hysteresis branches are visited
        return K.integrate_zones(
            n_inner, 1.0 / 60.0, h0, h1, K.FREEZING, K.MELTING, 10.0, 0.0,
            *tables, *geom,
            0.9999, 0.9998, 1e-4,
            0.99999, 0.223 / 15, 0.205 / 15, 21.0,
            2.0, 0.0, 0.0, 1.9, 0.2, 1.9,
            0.5, 0.1, 23.0, 21.0,
            out,
        )

    rng = np.random.default_rng(0)
    h = rng.uniform(tables[1][0], tables[1][-1], n_lookup)
    br = rng.integers(0, 2, n_lookup)

    def lookup():
        return K.branch_temperatures(h, br, *tables)

    timings = {}
    for name, fn in (("integrate_zones", zones), ("branch_temperatures", lookup)):
        t0 = time.perf_counter()
        fn()  # first call includes compilation on the numba path
        first = time.perf_counter() - t0
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        timings[name] = {"first_s": first, "best_s": best}
    return {"numba": NUMBA_ENABLED, "timings": timings}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--n-inner", type=int, default=10080, help="inner steps (default one week at 1 min)")
    ap.add_argument("--n-lookup", type=int, default=100_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(run_worker(args.n_inner, args.n_lookup, args.repeats)))
        return

    results = {}
    for label, flag in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, PCS_MPC_DISABLE_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--n-inner", str(args.n_inner),
               "--n-lookup", str(args.n_lookup), "--repeats", str(args.repeats)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[label] = json.loads(res.stdout.strip().splitlines()[-1])

    print(f"{'kernel':<22}{'numba best [ms]':>17}{'numpy best [ms]':>17}{'speed-up':>10}")
    for k in results["numba"]["timings"]:
        a = results["numba"]["timings"][k]["best_s"] * 1e3
        b = results["numpy"]["timings"][k]["best_s"] * 1e3
        print(f"{k:<22}{a:>17.3f}{b:>17.3f}{b / a:>9.1f}x")
    if not results["numba"]["numba"]:
        print("note: numba unavailable, both columns ran the fallback path")


if __name__ == "__main__":
    main()
