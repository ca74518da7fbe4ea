"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel (harmonic oscillator bank, recurrent forward/backward
scan) on a realistic workload with both backends and prints a timing table.
The numba variants are warmed up once before timing so JIT compilation does
not pollute the numbers.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--seconds 2.0]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from esvs import kernels


def _time_call(fn, args, repeats: int, budget_s: float) -> float:
    """Best-of-N wall time for fn(*args), stopping early after budget_s."""
    best = np.inf
    start = time.perf_counter()
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
        if time.perf_counter() - start > budget_s:
            break
    return best


def build_workloads(rng: np.random.Generator) -> dict:
    """Representative sizes: ~4 s of audio at 16 kHz, ~2k-frame sequences."""
    n_samples = 64_000
    f0 = np.exp(rng.uniform(np.log(80.0), np.log(500.0), size=n_samples))
    amp = np.abs(rng.normal(0.1, 0.02, size=n_samples))

    t_len, in_dim, h_dim = 2048, 48, 32
    x = rng.normal(size=(t_len, in_dim))
    wx = rng.normal(scale=1.0 / np.sqrt(in_dim), size=(in_dim, h_dim))
    wh = rng.normal(scale=1.0 / np.sqrt(h_dim), size=(h_dim, h_dim))
    b = np.zeros(h_dim)
    h = kernels.rnn_forward_numpy(x, wx, wh, b)
    dh = rng.normal(size=(t_len, h_dim))

    return {
        "render_harmonics (64k samples)": {
            "numpy": (kernels.render_harmonics_numpy, (f0, amp, 0.75, 16_000)),
            "numba": (getattr(kernels, "_render_harmonics_jit", None),
                      (f0, amp, 0.75, 16_000)),
        },
        "rnn_forward (2048x48 -> 32)": {
            "numpy": (kernels.rnn_forward_numpy, (x, wx, wh, b)),
            "numba": (getattr(kernels, "_rnn_forward_jit", None), (x, wx, wh, b)),
        },
        "rnn_backward (2048x48 -> 32)": {
            "numpy": (kernels.rnn_backward_numpy, (x, h, wx, wh, dh)),
            "numba": (getattr(kernels, "_rnn_backward_jit", None),
                      (x, h, wx, wh, dh)),
        },
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions per kernel (best is reported)")
    parser.add_argument("--seconds", type=float, default=2.0,
                        help="soft time budget per kernel/backend")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    workloads = build_workloads(rng)

    print(f"numba available: {kernels.HAS_NUMBA}")
    print(f"active backend : {kernels.backend_name()}")
    print()
    header = f"{'kernel':34s} {'numpy (ms)':>12s} {'numba (ms)':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))

    for name, impls in workloads.items():
        fn_np, args_np = impls["numpy"]
        t_np = _time_call(fn_np, args_np, args.repeats, args.seconds)
        fn_nb, args_nb = impls["numba"]
        if fn_nb is None:
            print(f"{name:34s} {t_np * 1e3:12.3f} {'n/a':>12s} {'n/a':>9s}")
            continue
        fn_nb(*args_nb)  # warm-up: trigger JIT compilation outside the timer
        t_nb = _time_call(fn_nb, args_nb, args.repeats, args.seconds)
        print(f"{name:34s} {t_np * 1e3:12.3f} {t_nb * 1e3:12.3f} "
              f"{t_np / t_nb:8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
