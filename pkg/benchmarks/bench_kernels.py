"""Time the compiled kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under both backends; the best of
``--repeat`` runs is reported along with the speed-up and the largest
difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from srocomp import _kernels
from srocomp._kernels import python as pyk


def cases(rng):
    """Representative workloads: one RIR, one resampler block, one GCC search."""
    delays = rng.uniform(0, 4000, 3000)          # image sources of one RIR
    gains = rng.standard_normal(3000)
    x = rng.standard_normal(20000)
    pos = np.sort(rng.uniform(0, 20000, 16384))
    P = rng.standard_normal(4097) + 1j * rng.standard_normal(4097)
    lags = np.linspace(-50, 50, 101)

    def taps(k):
        out = np.zeros(4100)
        k.accumulate_fractional_taps(out, delays, gains, 16)
        return out

    return {
        "accumulate_fractional_taps": taps,
        "sinc_interpolate": lambda k: k.sinc_interpolate(x, pos, 32, 8.0),
        "gcc_at_lag (101 lags)": lambda k: np.array([k.gcc_at_lag(P, t, 8192) for t in lags]),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not built; only the NumPy fallback is timed")
    backends = [("python", pyk)]
    if _kernels.compiled is not None:
        backends.append(("cython", _kernels.compiled))
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}" + "".join(f"{name:>12}" for name, _ in backends)
          + f"{'speed-up':>10}{'max diff':>11}")
    for label, fn in cases(rng).items():
        times, outs = [], []
        for _, k in backends:
            outs.append(fn(k))
            times.append(min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)))
        row = f"{label:<30}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x{np.max(np.abs(outs[0] - outs[1])):>11.1e}"
        print(row)


if __name__ == "__main__":
    main()
