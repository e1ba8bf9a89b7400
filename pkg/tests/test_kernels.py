"""Backend agreement: every kernel's numba and numpy implementations must
produce the same numbers."""

import os
import subprocess
import sys

import numpy as np
import pytest

from calibcapture import kernels
from helpers import brute_dtw

pytestmark = pytest.mark.skipif(
    not kernels.NUMBA_ENABLED, reason="numba backend disabled in this environment"
)

RNG = np.random.default_rng(1234)


def pair(name):
    return kernels.NUMPY_IMPL[name], kernels.NUMBA_IMPL[name]


def test_laplacian_backends_agree():
    f_np, f_nb = pair("laplacian_response")
    for _ in range(5):
        img = RNG.uniform(0, 255, (37, 53))
        np.testing.assert_allclose(f_nb(img), f_np(img), rtol=1e-13, atol=1e-10)


def test_sobel_backends_agree():
    f_np, f_nb = pair("sobel_sq_response")
    for _ in range(5):
        img = RNG.uniform(0, 255, (24, 31))
        np.testing.assert_allclose(f_nb(img), f_np(img), rtol=1e-13, atol=1e-9)


def test_pinhole_projection_backends_agree():
    f_np, f_nb = pair("pinhole_project_rt")
    intr = np.array([460.0, 455.0, 400.0, 300.0, -0.2, 0.05, -0.01, 1e-4, -2e-4])
    R = np.linalg.qr(RNG.normal(size=(3, 3)))[0]
    if np.linalg.det(R) < 0:
        R[:, 0] = -R[:, 0]
    t = np.array([0.1, -0.2, 2.5])
    pts = RNG.uniform(-1, 1, (500, 3))
    a = f_np(intr, R, t, pts, 1e-6)
    b = f_nb(intr, R, t, pts, 1e-6)
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
    np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)], rtol=1e-12)


def test_ds_projection_backends_agree():
    f_np, f_nb = pair("ds_project_rt")
    intr = np.array([350.0, 352.0, 640.0, 480.0, -0.25, 0.58])
    R = np.eye(3)
    t = np.zeros(3)
    pts = RNG.normal(size=(800, 3))
    a = f_np(intr, R, t, pts)
    b = f_nb(intr, R, t, pts)
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
    np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)], rtol=1e-12)


def test_dtw_full_backends_agree_and_match_brute_force():
    f_np, f_nb = pair("dtw_full")
    for n, m in [(2, 2), (3, 4), (4, 3), (4, 5)]:
        dist = RNG.uniform(0, 3, (n, m))
        total_np, steps_np = f_np(dist)
        total_nb, steps_nb = f_nb(dist)
        assert steps_np == steps_nb
        assert abs(total_np - total_nb) < 1e-12
        best, achieving = brute_dtw(dist)
        assert abs(total_np - best) < 1e-9
        assert any(abs(total_np - t) < 1e-9 and steps_np == l for t, l in achieving)


def test_spot_costs_backends_agree():
    f_np, f_nb = pair("spot_costs")
    n_tmpl, n_seq, min_len, max_len = 12, 90, 8, 16
    dist = RNG.uniform(0, 4, (n_tmpl, n_seq))
    dist_pad = np.concatenate([dist, np.full((n_tmpl, max_len), np.inf)], axis=1)
    c_np, l_np = f_np(dist_pad, n_seq, min_len, max_len)
    c_nb, l_nb = f_nb(dist_pad, n_seq, min_len, max_len)
    np.testing.assert_allclose(c_np, c_nb, rtol=1e-12)
    np.testing.assert_array_equal(l_np, l_nb)


def test_spot_costs_matches_per_window_brute_force():
    n_tmpl, n_seq, min_len, max_len = 4, 12, 3, 6
    dist = RNG.uniform(0, 4, (n_tmpl, n_seq))
    dist_pad = np.concatenate([dist, np.full((n_tmpl, max_len), np.inf)], axis=1)
    costs, lens = kernels.spot_costs(dist_pad, n_seq, min_len, max_len)
    for s in range(n_seq - min_len + 1):
        best = np.inf
        best_len = 0
        for end_len in range(min_len, max_len + 1):
            if s + end_len > n_seq:
                break
            total, achieving = brute_dtw(dist[:, s : s + end_len])
            norm = min(t / l for t, l in achieving)
            if norm < best - 1e-12:
                best = norm
                best_len = end_len
        assert abs(costs[s] - best) < 1e-9, f"start {s}"


def test_numpy_fallback_selected_by_env_flag():
    code = (
        "from calibcapture import kernels; "
        "print(kernels.backend_name(), kernels.NUMBA_ENABLED)"
    )
    env = dict(os.environ, CALIBCAPTURE_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["numpy", "False"]
