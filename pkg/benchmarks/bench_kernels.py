"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--resolution 256]

Each kernel runs on identical inputs under both backends; outputs are checked
for equality before timings are reported.
"""
import argparse
import statistics
import time

import numpy as np

from ensemble_reach import _kernels_py, kernels

try:
    from ensemble_reach import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _time(fn, repeat):
    out, samples = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return out, statistics.median(samples)


def cases(resolution, rng):
    t = np.linspace(0, 2 * np.pi, 400)
    ring = np.exp(1j * t)
    segment = np.linspace(-1, 1, 400) + 0j
    x0, y0, h = -1.5, -1.5, 3.0 / resolution
    grid = (x0, y0, h, h, resolution, resolution, 0.05)

    def raster(impl, cloud):
        return lambda: kernels.rasterize_disks(cloud.real, cloud.imag, *grid, impl=impl)

    blocked_ring = kernels.rasterize_disks(ring.real, ring.imag, *grid, impl=_kernels_py)
    blocked_seg = kernels.rasterize_disks(segment.real, segment.imag, *grid, impl=_kernels_py)
    scattered = rng.normal(size=600) + 1j * rng.normal(size=600)
    return [
        ("rasterize_disks ring", lambda impl: raster(impl, ring)),
        ("flood_reach ring", lambda impl: (lambda: kernels.flood_reach(blocked_ring, impl=impl))),
        ("flood_reach segment", lambda impl: (lambda: kernels.flood_reach(blocked_seg, impl=impl))),
        ("cluster_radius 600 pts",
         lambda impl: (lambda: kernels.cluster_radius(scattered, 0.08, impl=impl))),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--resolution", type=int, default=256)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not available; only the fallback can run")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, make in cases(args.resolution, rng):
        out_py, t_py = _time(make(_kernels_py), args.repeat)
        out_c, t_c = _time(make(_kernels_c), args.repeat)
        if not np.array_equal(np.asarray(out_py), np.asarray(out_c)):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<26}{1e3 * t_py:>14.2f}{1e3 * t_c:>14.3f}{t_py / t_c:>9.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
