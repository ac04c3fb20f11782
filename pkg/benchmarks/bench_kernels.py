"""Compare the compiled and NumPy propagation kernels.

Usage: python benchmarks/bench_kernels.py [--rows 1 16 128] [--repeat 3]

Reports microseconds per row-step for ``evolve`` and ``krotov_sweep`` on a
resonant pi pulse and the maximum deviation between the two backends.
"""
import argparse
import timeit

import numpy as np

from braggsim._backend import get_kernels
from braggsim.ladder import LadderParams
from braggsim.pulses import rabi_pulse


def bench(kern, rows, pulse, params, repeat):
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(rows, params.size)) + 1j * rng.normal(size=(rows, params.size))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    mu = np.ones(rows)
    beta = rng.normal(0, 0.05, rows)
    args = (psi, pulse.omega, pulse.phidot, pulse.dt, params.n_min, mu, beta)

    def run():
        return kern.evolve(*args)

    t = min(timeit.repeat(run, number=1, repeat=repeat))
    _, _, chi = kern.evolve(psi, pulse.omega, pulse.phidot, pulse.dt, params.n_min, mu, beta,
                            True, True)

    def sweep():
        return kern.krotov_sweep(psi, chi, pulse.omega, pulse.phidot, pulse.dt, params.n_min, mu,
                                 beta, np.ones(pulse.n_steps), 1e-3)

    ts = min(timeit.repeat(sweep, number=1, repeat=repeat))
    steps = rows * pulse.n_steps
    return t / steps * 1e6, ts / steps * 1e6, run()[0], sweep()[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, nargs="+", default=[1, 16, 128])
    ap.add_argument("--dt", type=float, default=0.05)
    ap.add_argument("--repeat", type=int, default=3)
    opts = ap.parse_args()
    params = LadderParams()
    pulse = rabi_pulse("pi", 5, dt=opts.dt)
    try:
        compiled = get_kernels("cython")
    except ImportError:
        print("compiled extension not built; only the NumPy backend is available")
        compiled = None
    fallback = get_kernels("python")
    print(f"{'rows':>6} {'backend':>8} {'evolve us/step':>15} {'sweep us/step':>14}")
    for rows in opts.rows:
        res = {}
        for name, kern in (("cython", compiled), ("python", fallback)):
            if kern is None:
                continue
            res[name] = bench(kern, rows, pulse, params, opts.repeat)
            print(f"{rows:>6} {name:>8} {res[name][0]:>15.2f} {res[name][1]:>14.2f}")
        if len(res) == 2:
            dev = np.abs(res["cython"][2] - res["python"][2]).max()
            devs = np.abs(res["cython"][3] - res["python"][3]).max()
            speed = res["python"][0] / res["cython"][0]
            print(f"{'':>6} speedup {speed:.1f}x, max deviation evolve {dev:.1e}, sweep {devs:.1e}")


if __name__ == "__main__":
    main()
