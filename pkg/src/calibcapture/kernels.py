"""Hot numeric kernels, each with a numba and a pure-numpy backend.

Every kernel here exists twice: a numba @njit loop implementation and a
vectorized pure-numpy fallback. The active backend is picked once at import
time from the CALIBCAPTURE_NUMBA environment variable:

    unset / "auto" / "1" / "on"   -> numba when importable, else numpy
    "0" / "off" / "false" / "no"  -> numpy always

Both backends compute the same recurrences in the same operand order, so
results agree to float precision; tests/test_kernels.py checks the pairs
against each other and benchmarks/bench_kernels.py times them.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _numba_requested() -> bool:
    flag = os.environ.get("CALIBCAPTURE_NUMBA", "auto").strip().lower()
    return flag not in ("0", "off", "false", "no", "numpy")


# ---------------------------------------------------------------------------
# image metrics: 3x3 responses over interior pixels (borders excluded)
# ---------------------------------------------------------------------------

def _np_laplacian_response(gray):
    # kernel [[0,1,0],[1,-4,1],[0,1,0]]
    return (
        gray[:-2, 1:-1]
        + gray[2:, 1:-1]
        + gray[1:-1, :-2]
        + gray[1:-1, 2:]
        - 4.0 * gray[1:-1, 1:-1]
    )


def _loop_laplacian_response(gray):
    h, w = gray.shape
    out = np.empty((h - 2, w - 2))
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            out[r - 1, c - 1] = (
                gray[r - 1, c]
                + gray[r + 1, c]
                + gray[r, c - 1]
                + gray[r, c + 1]
                - 4.0 * gray[r, c]
            )
    return out


def _np_sobel_sq_response(gray):
    # squared magnitude of the 3x3 Sobel gradient, computed as correlation
    gx = (
        -gray[:-2, :-2]
        + gray[:-2, 2:]
        - 2.0 * gray[1:-1, :-2]
        + 2.0 * gray[1:-1, 2:]
        - gray[2:, :-2]
        + gray[2:, 2:]
    )
    gy = (
        -gray[:-2, :-2]
        - 2.0 * gray[:-2, 1:-1]
        - gray[:-2, 2:]
        + gray[2:, :-2]
        + 2.0 * gray[2:, 1:-1]
        + gray[2:, 2:]
    )
    return gx * gx + gy * gy


def _loop_sobel_sq_response(gray):
    h, w = gray.shape
    out = np.empty((h - 2, w - 2))
    for r in range(1, h - 1):
        for c in range(1, w - 1):
            gx = (
                -gray[r - 1, c - 1]
                + gray[r - 1, c + 1]
                - 2.0 * gray[r, c - 1]
                + 2.0 * gray[r, c + 1]
                - gray[r + 1, c - 1]
                + gray[r + 1, c + 1]
            )
            gy = (
                -gray[r - 1, c - 1]
                - 2.0 * gray[r - 1, c]
                - gray[r - 1, c + 1]
                + gray[r + 1, c - 1]
                + 2.0 * gray[r + 1, c]
                + gray[r + 1, c + 1]
            )
            out[r - 1, c - 1] = gx * gx + gy * gy
    return out


# ---------------------------------------------------------------------------
# batched camera projections (rows that fail the model's domain become NaN)
# ---------------------------------------------------------------------------

def _np_pinhole_project_rt(intr, R, t, pts, z_min):
    fx, fy, cx, cy = intr[0], intr[1], intr[2], intr[3]
    k1, k2, k3, p1, p2 = intr[4], intr[5], intr[6], intr[7], intr[8]
    P = pts @ R.T + t
    z = P[:, 2]
    ok = z > z_min
    zs = np.where(ok, z, 1.0)
    x = P[:, 0] / zs
    y = P[:, 1] / zs
    r2 = x * x + y * y
    rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = fx * xd + cx
    out[:, 1] = fy * yd + cy
    out[~ok] = np.nan
    return out


def _loop_pinhole_project_rt(intr, R, t, pts, z_min):
    fx, fy, cx, cy = intr[0], intr[1], intr[2], intr[3]
    k1, k2, k3, p1, p2 = intr[4], intr[5], intr[6], intr[7], intr[8]
    n = pts.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        X = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        Y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        Z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        if Z > z_min:
            x = X / Z
            y = Y / Z
            r2 = x * x + y * y
            rad = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = x * rad + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            yd = y * rad + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            out[i, 0] = fx * xd + cx
            out[i, 1] = fy * yd + cy
        else:
            out[i, 0] = np.nan
            out[i, 1] = np.nan
    return out


def _np_ds_project_rt(intr, R, t, pts):
    fx, fy, cx, cy, xi, alpha = (
        intr[0], intr[1], intr[2], intr[3], intr[4], intr[5],
    )
    if alpha <= 0.5:
        w1 = alpha / (1.0 - alpha)
    else:
        w1 = (1.0 - alpha) / alpha
    w2 = (w1 + xi) / np.sqrt(2.0 * w1 * xi + xi * xi + 1.0)
    P = pts @ R.T + t
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    d1 = np.sqrt(x * x + y * y + z * z)
    zeta = xi * d1 + z
    d2 = np.sqrt(x * x + y * y + zeta * zeta)
    denom = alpha * d2 + (1.0 - alpha) * zeta
    ok = (z > -w2 * d1) & (denom > 1e-12)
    ds = np.where(ok, denom, 1.0)
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = fx * x / ds + cx
    out[:, 1] = fy * y / ds + cy
    out[~ok] = np.nan
    return out


def _loop_ds_project_rt(intr, R, t, pts):
    fx, fy, cx, cy, xi, alpha = (
        intr[0], intr[1], intr[2], intr[3], intr[4], intr[5],
    )
    if alpha <= 0.5:
        w1 = alpha / (1.0 - alpha)
    else:
        w1 = (1.0 - alpha) / alpha
    w2 = (w1 + xi) / np.sqrt(2.0 * w1 * xi + xi * xi + 1.0)
    n = pts.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
        y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
        z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
        d1 = np.sqrt(x * x + y * y + z * z)
        zeta = xi * d1 + z
        d2 = np.sqrt(x * x + y * y + zeta * zeta)
        denom = alpha * d2 + (1.0 - alpha) * zeta
        if z > -w2 * d1 and denom > 1e-12:
            out[i, 0] = fx * x / denom + cx
            out[i, 1] = fy * y / denom + cy
        else:
            out[i, 0] = np.nan
            out[i, 1] = np.nan
    return out


# ---------------------------------------------------------------------------
# dynamic time warping
#
# Step pattern {(1,0),(0,1),(1,1)}; the optimizer minimizes the summed frame
# distance, the reported score is that sum divided by the length of the
# winning path. Ties between predecessors prefer diagonal, then vertical,
# then horizontal, in both backends.
# ---------------------------------------------------------------------------

def _dtw_full_impl(dist):
    """Full alignment of both sequences. Returns (total_cost, path_length)."""
    n, m = dist.shape
    acc = np.empty((n, m))
    steps = np.empty((n, m), np.int64)
    acc[0, 0] = dist[0, 0]
    steps[0, 0] = 1
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + dist[0, j]
        steps[0, j] = j + 1
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + dist[i, 0]
        steps[i, 0] = i + 1
        for j in range(1, m):
            a_diag = acc[i - 1, j - 1]
            a_up = acc[i - 1, j]
            a_left = acc[i, j - 1]
            if a_diag <= a_up and a_diag <= a_left:
                acc[i, j] = dist[i, j] + a_diag
                steps[i, j] = steps[i - 1, j - 1] + 1
            elif a_up <= a_left:
                acc[i, j] = dist[i, j] + a_up
                steps[i, j] = steps[i - 1, j] + 1
            else:
                acc[i, j] = dist[i, j] + a_left
                steps[i, j] = steps[i, j - 1] + 1
    return acc[n - 1, m - 1], steps[n - 1, m - 1]


def _loop_spot_costs(dist_pad, n_seq, min_len, max_len):
    """Open-end DTW of the template against every window start.

    dist_pad is (template_frames, n_seq + max_len) with +inf padding past the
    real sequence. For each start s the window may end anywhere between
    min_len and max_len frames; the returned cost is the best path-length
    normalized cost over those endpoints, with the matched window length.
    """
    n_tmpl = dist_pad.shape[0]
    n_starts = n_seq - min_len + 1
    costs = np.full(n_starts, np.inf)
    lens = np.zeros(n_starts, np.int64)
    acc = np.empty((n_tmpl, max_len))
    steps = np.empty((n_tmpl, max_len), np.int64)
    for s in range(n_starts):
        acc[0, 0] = dist_pad[0, s]
        steps[0, 0] = 1
        for j in range(1, max_len):
            acc[0, j] = acc[0, j - 1] + dist_pad[0, s + j]
            steps[0, j] = j + 1
        for i in range(1, n_tmpl):
            acc[i, 0] = acc[i - 1, 0] + dist_pad[i, s]
            steps[i, 0] = i + 1
            for j in range(1, max_len):
                a_diag = acc[i - 1, j - 1]
                a_up = acc[i - 1, j]
                a_left = acc[i, j - 1]
                if a_diag <= a_up and a_diag <= a_left:
                    acc[i, j] = dist_pad[i, s + j] + a_diag
                    steps[i, j] = steps[i - 1, j - 1] + 1
                elif a_up <= a_left:
                    acc[i, j] = dist_pad[i, s + j] + a_up
                    steps[i, j] = steps[i - 1, j] + 1
                else:
                    acc[i, j] = dist_pad[i, s + j] + a_left
                    steps[i, j] = steps[i, j - 1] + 1
        best = np.inf
        best_len = 0
        for j in range(min_len - 1, max_len):
            a = acc[n_tmpl - 1, j]
            if np.isfinite(a):
                c = a / steps[n_tmpl - 1, j]
                if c < best:
                    best = c
                    best_len = j + 1
        costs[s] = best
        lens[s] = best_len
    return costs, lens


def _np_spot_costs(dist_pad, n_seq, min_len, max_len):
    # same recurrence as _loop_spot_costs, vectorized across window starts
    n_tmpl = dist_pad.shape[0]
    n_starts = n_seq - min_len + 1
    win = sliding_window_view(dist_pad, max_len, axis=1)[:, :n_starts, :]
    acc_prev = np.cumsum(win[0], axis=1)
    steps_prev = np.broadcast_to(
        np.arange(1, max_len + 1, dtype=np.int64), (n_starts, max_len)
    ).copy()
    acc_cur = np.empty_like(acc_prev)
    steps_cur = np.empty_like(steps_prev)
    for i in range(1, n_tmpl):
        wi = win[i]
        acc_cur[:, 0] = acc_prev[:, 0] + wi[:, 0]
        steps_cur[:, 0] = i + 1
        for j in range(1, max_len):
            a_diag = acc_prev[:, j - 1]
            a_up = acc_prev[:, j]
            a_left = acc_cur[:, j - 1]
            diag_wins = a_diag <= a_up
            m_du = np.where(diag_wins, a_diag, a_up)
            st_du = np.where(diag_wins, steps_prev[:, j - 1], steps_prev[:, j])
            take_left = a_left < m_du
            acc_cur[:, j] = wi[:, j] + np.where(take_left, a_left, m_du)
            steps_cur[:, j] = np.where(take_left, steps_cur[:, j - 1], st_du) + 1
        acc_prev, acc_cur = acc_cur, acc_prev
        steps_prev, steps_cur = steps_cur, steps_prev
    last = acc_prev[:, min_len - 1:]
    last_steps = steps_prev[:, min_len - 1:]
    with np.errstate(invalid="ignore"):
        norm = last / last_steps
    norm = np.where(np.isfinite(last), norm, np.inf)
    costs = norm.min(axis=1)
    lens = norm.argmin(axis=1) + min_len
    finite = np.isfinite(costs)
    return np.where(finite, costs, np.inf), np.where(finite, lens, 0).astype(np.int64)


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

NUMBA_ENABLED = False
_jit_laplacian_response = None
_jit_sobel_sq_response = None
_jit_pinhole_project_rt = None
_jit_ds_project_rt = None
_jit_dtw_full = None
_jit_spot_costs = None

if _numba_requested():
    try:
        from numba import njit
    except ImportError:
        njit = None
    if njit is not None:
        _jit = njit(cache=True, fastmath=False)
        _jit_laplacian_response = _jit(_loop_laplacian_response)
        _jit_sobel_sq_response = _jit(_loop_sobel_sq_response)
        _jit_pinhole_project_rt = _jit(_loop_pinhole_project_rt)
        _jit_ds_project_rt = _jit(_loop_ds_project_rt)
        _jit_dtw_full = _jit(_dtw_full_impl)
        _jit_spot_costs = _jit(_loop_spot_costs)
        NUMBA_ENABLED = True

NUMPY_IMPL = {
    "laplacian_response": _np_laplacian_response,
    "sobel_sq_response": _np_sobel_sq_response,
    "pinhole_project_rt": _np_pinhole_project_rt,
    "ds_project_rt": _np_ds_project_rt,
    "dtw_full": _dtw_full_impl,
    "spot_costs": _np_spot_costs,
}

NUMBA_IMPL = None
if NUMBA_ENABLED:
    NUMBA_IMPL = {
        "laplacian_response": _jit_laplacian_response,
        "sobel_sq_response": _jit_sobel_sq_response,
        "pinhole_project_rt": _jit_pinhole_project_rt,
        "ds_project_rt": _jit_ds_project_rt,
        "dtw_full": _jit_dtw_full,
        "spot_costs": _jit_spot_costs,
    }

_ACTIVE = NUMBA_IMPL if NUMBA_ENABLED else NUMPY_IMPL

laplacian_response = _ACTIVE["laplacian_response"]
sobel_sq_response = _ACTIVE["sobel_sq_response"]
pinhole_project_rt = _ACTIVE["pinhole_project_rt"]
ds_project_rt = _ACTIVE["ds_project_rt"]
dtw_full = _ACTIVE["dtw_full"]
spot_costs = _ACTIVE["spot_costs"]


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
