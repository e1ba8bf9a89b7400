#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Run from the repo root:

    python3 benchmarks/bench_kernels.py [--repeats 7]

Sizes match the hot spots of a real session: VGA-ish blur scoring, batched
projection of full problems, and keyword spotting over a minute of audio.
"""

import argparse
import time

import numpy as np

from calibcapture import kernels


def _time(fn, *args, repeats):
    fn(*args)  # warm up (JIT compile / cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not kernels.NUMBA_ENABLED:
        print(
            "numba backend unavailable (CALIBCAPTURE_NUMBA disabled or numba "
            "missing); nothing to compare."
        )
        return

    rng = np.random.default_rng(0)
    gray = rng.uniform(0, 255, (480, 640))

    intr_ph = np.array([460.0, 455.0, 400.0, 300.0, -0.2, 0.05, 0.0, 1e-4, -1e-4])
    intr_ds = np.array([350.0, 352.0, 640.0, 480.0, -0.2, 0.58])
    R = np.eye(3)
    t = np.array([0.0, 0.0, 2.0])
    pts = rng.uniform(-0.5, 0.5, (3600, 3))
    pts[:, 2] += 2.0

    n_tmpl, n_seq = 60, 6000
    dist = rng.uniform(0, 5, (n_tmpl, n_seq))
    min_len, max_len = 42, 78
    dist_pad = np.concatenate([dist, np.full((n_tmpl, max_len), np.inf)], axis=1)

    cases = [
        ("laplacian_response 640x480", (gray,)),
        ("sobel_sq_response 640x480", (gray,)),
        ("pinhole_project_rt 3600 pts", (intr_ph, R, t, pts, 1e-6)),
        ("ds_project_rt 3600 pts", (intr_ds, R, t, pts)),
        ("spot_costs 60x6000", (dist_pad, n_seq, min_len, max_len)),
        ("dtw_full 200x260", (rng.uniform(0, 5, (200, 260)),)),
    ]

    print(f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for label, call_args in cases:
        name = label.split()[0]
        t_np = _time(kernels.NUMPY_IMPL[name], *call_args, repeats=args.repeats)
        t_nb = _time(kernels.NUMBA_IMPL[name], *call_args, repeats=args.repeats)
        print(
            f"{label:32s} {t_np * 1e3:10.3f} ms {t_nb * 1e3:10.3f} ms "
            f"{t_np / t_nb:8.1f}x"
        )


if __name__ == "__main__":
    main()
