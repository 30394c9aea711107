"""Time the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the env flag does not matter here.
Results must agree exactly; the script aborts otherwise.
"""

import argparse
import time

import numpy as np

from gaitreg.data import kernels as raster
from gaitreg.data.walker import camera_transform, identity_params, walker_primitives
from gaitreg.eval import kernels as ranking


def best_of(fn, repeat):
    fn()  # warm-up (jit compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    prims = np.stack([walker_primitives(identity_params(0, k), 0.3 * k, camera_transform(k % 4), 128, 64)
                      for k in range(64)])
    frames = lambda f: [f(128, 64, p) for p in prims]
    assert all(np.array_equal(a, b) for a, b in zip(frames(raster._raster_nb), frames(raster._raster_np)))

    g = np.random.default_rng(0)
    nq, ng = 200, 3000
    dist = g.random((nq, ng))
    valid = g.random((nq, ng)) > 0.1
    positive = (g.random((nq, ng)) > 0.97) & valid
    a, b = ranking._rank_nb(dist, valid, positive), ranking._rank_np(dist, valid, positive)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))

    order = np.argsort(dist, axis=1, kind="stable")
    rows = [
        ("rasterize 64 frames 128x64", lambda: frames(raster._raster_nb), lambda: frames(raster._raster_np)),
        (f"rank {nq} queries x {ng} gallery", lambda: ranking._rank_nb(dist, valid, positive),
         lambda: ranking._rank_np(dist, valid, positive)),
        ("  of which hit scan (sort excluded)", lambda: ranking._scan_nb(order, valid, positive),
         lambda: ranking._scan_np(order, valid, positive)),
    ]
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speed-up':>9s}")
    for name, nb, npf in rows:
        t_nb, t_np = best_of(nb, args.repeat), best_of(npf, args.repeat)
        print(f"{name:34s} {1e3 * t_nb:10.2f} {1e3 * t_np:10.2f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
