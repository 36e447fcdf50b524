"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best of N runs after one warm-up call (the warm-up
absorbs JIT compilation, or loads it from the on-disk cache).
"""
import argparse
import time

import numpy as np

from equilcast import _kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    for T, B, H in [(250, 16, 16), (250, 16, 64), (250, 16, 128)]:
        zx = rng.normal(0, 1, (T, B, 4 * H))
        U = rng.normal(0, 0.3, (H, 4 * H))
        UT = np.ascontiguousarray(U.T)
        dh = rng.normal(size=(T, B, H))
        fwd = _kernels.lstm_forward_numpy(zx, U)
        yield (f"lstm forward  T={T} B={B} H={H}",
               lambda zx=zx, U=U: _kernels.lstm_forward_numba(zx, U),
               lambda zx=zx, U=U: _kernels.lstm_forward_numpy(zx, U))
        yield (f"lstm backward T={T} B={B} H={H}",
               lambda dh=dh, f=fwd, UT=UT: _kernels.lstm_backward_numba(dh, *f[1:], UT),
               lambda dh=dh, f=fwd, UT=UT: _kernels.lstm_backward_numpy(dh, *f[1:], UT))
    for n, sub in [(32, 4), (64, 8)]:
        args = (3.0, 3e-3, 1e-6, 2e8, 1.5e-11, 15.0, 3.63e-6, n, 188.0, 250, sub)
        yield (f"pore integrate grid={n} substeps={sub}",
               lambda a=args: _kernels.pore_integrate_numba(*a),
               lambda a=args: _kernels.pore_integrate_numpy(*a))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases():
        tf, ts = best_of(fast, a.repeat), best_of(slow, a.repeat)
        print(f"{name:40s} {1e3 * tf:10.2f} {1e3 * ts:10.2f} {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
