"""Intrinsic and extrinsic estimation from 2D-3D target correspondences.

Pipeline: per view, a Hartley-normalized DLT homography; per camera, a
closed-form intrinsic initialization (absolute-conic constraints for pinhole,
an equidistant focal guess for double-sphere) plus homography-decomposed
board poses; then Levenberg-Marquardt over the reprojection error with
central-difference Jacobians. Multi-camera rigs chain pairwise relative
poses over a spanning tree and refine jointly with camera 0 pinned as the
reference frame.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse

from . import kernels
from .camera_models import (
    DoubleSphereIntrinsics,
    Intrinsics,
    PinholeIntrinsics,
    Pose,
    Z_MIN,
    ds_unproject,
    intrinsics_from_dict,
    intrinsics_to_dict,
    pose_compose,
    pose_from_dict,
    pose_inverse,
    pose_to_dict,
    rotvec_to_matrix,
)
from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DisconnectedGraph,
    DivergedOrStalled,
    IllConditioned,
    InsufficientSharedViews,
    InvalidConfig,
    InvariantViolation,
    MalformedResult,
    MalformedRow,
    MissingFile,
    NotEnoughViews,
)

PINHOLE = "pinhole"
DOUBLE_SPHERE = "double_sphere"

# residual magnitude standing in for projections that left the model's domain;
# large enough that LM rejects any step that pushes points out of view
INVALID_RESIDUAL = 1e4


@dataclass(frozen=True)
class TargetGeometry:
    rows: int
    cols: int
    spacing: float  # meters between adjacent corners

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise InvariantViolation("target needs at least 2x2 corners")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise InvariantViolation("corner spacing must be positive")

    @property
    def n_corners(self) -> int:
        return self.rows * self.cols

    def points3d(self) -> np.ndarray:
        """Corner k = r*cols + c sits at (c*spacing, r*spacing, 0)."""
        r, c = np.divmod(np.arange(self.n_corners), self.cols)
        return np.column_stack([c * self.spacing, r * self.spacing, np.zeros(self.n_corners)])

    def points2d(self) -> np.ndarray:
        return self.points3d()[:, :2]


@dataclass(frozen=True)
class Observation:
    camera_id: str
    view_id: int
    corner_id: int
    u: float
    v: float


@dataclass
class CalibrationProblem:
    target: TargetGeometry
    observations: list[Observation]
    camera_ids: list[str]  # first entry is the extrinsic reference frame
    models: dict[str, str]  # camera_id -> PINHOLE | DOUBLE_SPHERE

    def __post_init__(self):
        known = set(self.camera_ids)
        for obs in self.observations:
            if obs.camera_id not in known:
                raise InvariantViolation(f"observation references unknown camera {obs.camera_id!r}")
            if not 0 <= obs.corner_id < self.target.n_corners:
                raise InvariantViolation(
                    f"corner id {obs.corner_id} out of range for {self.target.rows}x{self.target.cols} target"
                )
            if not (math.isfinite(obs.u) and math.isfinite(obs.v)):
                raise InvariantViolation("observation pixel must be finite")
        for cam in self.camera_ids:
            if self.models.get(cam) not in (PINHOLE, DOUBLE_SPHERE):
                raise InvalidConfig(f"camera {cam!r}: unknown model {self.models.get(cam)!r}")

    def view_ids(self) -> list[int]:
        return sorted({o.view_id for o in self.observations})

    def restrict(self, camera_ids=None, view_ids=None) -> "CalibrationProblem":
        cams = list(camera_ids) if camera_ids is not None else list(self.camera_ids)
        views = set(view_ids) if view_ids is not None else None
        obs = [
            o
            for o in self.observations
            if o.camera_id in set(cams) and (views is None or o.view_id in views)
        ]
        return CalibrationProblem(self.target, obs, cams, {c: self.models[c] for c in cams})


@dataclass
class ParameterSet:
    """One full parameter state: intrinsics per camera, board pose per view
    (board frame -> reference frame), extrinsic per camera (reference frame ->
    camera frame, camera 0 = identity)."""

    intrinsics: dict[str, Intrinsics]
    board_poses: dict[int, Pose]
    extrinsics: dict[str, Pose]


# ---------------------------------------------------------------------------
# homography estimation (normalized DLT)
# ---------------------------------------------------------------------------

def _hartley_normalize(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    if mean_dist < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return centered * s, T


def estimate_homography(board_pts: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """DLT with Hartley normalization on both point sets; H[2,2] scaled to 1."""
    board_pts = np.asarray(board_pts, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    if board_pts.shape[0] != pixels.shape[0]:
        raise InvalidConfig("correspondence count mismatch")
    n = board_pts.shape[0]
    if n < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {n}")

    src, T_src = _hartley_normalize(board_pts)
    dst, T_dst = _hartley_normalize(pixels)

    A = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    A[0::2, 0] = -x
    A[0::2, 1] = -y
    A[0::2, 2] = -1.0
    A[0::2, 6] = u * x
    A[0::2, 7] = u * y
    A[0::2, 8] = u
    A[1::2, 3] = -x
    A[1::2, 4] = -y
    A[1::2, 5] = -1.0
    A[1::2, 6] = v * x
    A[1::2, 7] = v * y
    A[1::2, 8] = v

    _, sigma, Vt = np.linalg.svd(A)
    # a second near-zero singular value means the solution is not unique
    if sigma[7] < 1e-9 * sigma[0]:
        raise DegenerateConfiguration("correspondences are degenerate (collinear or repeated)")
    H = np.linalg.inv(T_dst) @ Vt[-1].reshape(3, 3) @ T_src
    if abs(H[2, 2]) > 1e-12:
        H = H / H[2, 2]
    return H


# ---------------------------------------------------------------------------
# closed-form intrinsic initialization
# ---------------------------------------------------------------------------

def _conic_row(H: np.ndarray, i: int, j: int) -> np.ndarray:
    h_i, h_j = H[:, i], H[:, j]
    return np.array(
        [
            h_i[0] * h_j[0],
            h_i[0] * h_j[1] + h_i[1] * h_j[0],
            h_i[1] * h_j[1],
            h_i[2] * h_j[0] + h_i[0] * h_j[2],
            h_i[2] * h_j[1] + h_i[1] * h_j[2],
            h_i[2] * h_j[2],
        ]
    )


def init_pinhole_intrinsics(homographies: list[np.ndarray]) -> PinholeIntrinsics:
    """Closed-form fx, fy, cx, cy from the image of the absolute conic;
    distortion starts at zero."""
    if len(homographies) < 3:
        raise NotEnoughViews(f"need >= 3 views, got {len(homographies)}")
    rows = []
    for H in homographies:
        rows.append(_conic_row(H, 0, 1))
        rows.append(_conic_row(H, 0, 0) - _conic_row(H, 1, 1))
    V = np.array(rows)
    _, sigma, Vt = np.linalg.svd(V)
    if sigma[-2] < 1e-12 * sigma[0]:
        raise IllConditioned("view set does not constrain the intrinsics (degenerate orientations)")
    b = Vt[-1]
    if b[0] < 0:
        b = -b
    b11, b12, b22, b13, b23, b33 = b
    den = b11 * b22 - b12 * b12
    if b11 <= 0 or den <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    v0 = (b12 * b13 - b11 * b23) / den
    lam = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11
    if lam <= 0:
        raise IllConditioned("recovered conic is not positive definite")
    fx = math.sqrt(lam / b11)
    fy = math.sqrt(lam * b11 / den)
    skew = -b12 * fx * fx * fy / lam
    u0 = skew * v0 / fy - b13 * fx * fx / lam
    if not all(math.isfinite(val) for val in (fx, fy, u0, v0)):
        raise IllConditioned("intrinsic extraction produced non-finite values")
    return PinholeIntrinsics(fx=fx, fy=fy, cx=u0, cy=v0)


def pose_from_homography(K: np.ndarray, H: np.ndarray) -> Pose:
    """Decompose H = K [r1 r2 t] into a board-to-camera pose (t.z > 0)."""
    M = np.linalg.solve(np.asarray(K, dtype=np.float64), np.asarray(H, dtype=np.float64))
    n1 = np.linalg.norm(M[:, 0])
    if n1 < 1e-12:
        raise IllConditioned("homography decomposition degenerate")
    lam = 1.0 / n1
    t = lam * M[:, 2]
    if abs(t[2]) < 1e-12:
        raise BehindCamera("board plane passes through the camera center")
    if t[2] < 0:
        lam = -lam
        t = -t
    r1 = lam * M[:, 0]
    r2 = lam * M[:, 1]
    r3 = np.cross(r1, r2)
    Q = np.column_stack([r1, r2, r3])
    U, _, Vt = np.linalg.svd(Q)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return Pose.from_matrix(R, t)


def init_double_sphere(
    views: dict[int, tuple[np.ndarray, np.ndarray]],
    image_size: tuple[int, int],
    assumed_fov_deg: float = 180.0,
) -> tuple[DoubleSphereIntrinsics, dict[int, Pose]]:
    """Equidistant focal guess plus homography poses from unprojected pixels.

    views maps view_id -> (board_pts2d, pixels).
    """
    if assumed_fov_deg <= 0:
        raise InvalidConfig("assumed field of view must be positive")
    if len(views) < 3:
        raise NotEnoughViews(f"need >= 3 views, got {len(views)}")
    width, height = image_size
    fx = width / math.radians(assumed_fov_deg)
    K0 = DoubleSphereIntrinsics(
        fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, xi=0.0, alpha=0.5
    )
    poses: dict[int, Pose] = {}
    for view_id, (board_pts, pixels) in views.items():
        dirs = np.array([ds_unproject(K0, px) for px in pixels])
        ok = dirs[:, 2] > 1e-3
        if ok.sum() < 4:
            raise DegenerateConfiguration(f"view {view_id}: too few unprojectable corners")
        norm_xy = dirs[ok, :2] / dirs[ok, 2:3]
        H = estimate_homography(board_pts[ok], norm_xy)
        poses[view_id] = pose_from_homography(np.eye(3), H)
    return K0, poses


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement
# ---------------------------------------------------------------------------

@dataclass
class LmConfig:
    lambda0: float = 1e-3
    lambda_factor: float = 10.0
    max_iter: int = 200
    cost_rel_tol: float = 1e-12
    grad_tol: float = 1e-10
    lambda_max: float = 1e8
    refine_intrinsics: bool = True
    refine_board_poses: bool = True
    refine_extrinsics: bool = True
    huber_delta_px: float | None = None  # None disables the robust loss
    fail_rms_px: float = 5.0  # stalled runs above this raise DivergedOrStalled
    assumed_fov_deg: float = 180.0
    min_shared_views: int = 1
    refine_intrinsics_jointly: bool = False


@dataclass
class CalibrationResult:
    camera_ids: list[str]
    intrinsics: dict[str, Intrinsics]
    board_poses: dict[int, Pose]
    extrinsics: dict[str, Pose]
    rms_px: float
    per_view_rms: dict[int, float]
    per_camera_rms: dict[str, float]
    trace: list[tuple[int, float, float]]  # (iteration, cost, lambda), accepted steps
    converged: bool
    termination: str
    stages: dict[str, dict] = field(default_factory=dict)


@dataclass
class _Group:
    cam_idx: int
    view_idx: int
    pts: np.ndarray  # (n, 3) board-frame corners
    px: np.ndarray  # (n, 2)
    row0: int  # first residual row (2 per observation)

    @property
    def n_rows(self) -> int:
        return 2 * self.pts.shape[0]


class _Evaluator:
    """Groups observations by (camera, view) and evaluates residuals through
    the projection kernels; parameters live in flat per-block arrays."""

    def __init__(self, problem: CalibrationProblem):
        self.problem = problem
        self.camera_ids = list(problem.camera_ids)
        self.view_ids = problem.view_ids()
        self.cam_index = {c: i for i, c in enumerate(self.camera_ids)}
        self.view_index = {v: i for i, v in enumerate(self.view_ids)}
        self.models = [problem.models[c] for c in self.camera_ids]

        corners = problem.target.points3d()
        buckets: dict[tuple[int, int], list[Observation]] = {}
        for obs in problem.observations:
            key = (self.cam_index[obs.camera_id], self.view_index[obs.view_id])
            buckets.setdefault(key, []).append(obs)

        self.groups: list[_Group] = []
        row = 0
        for key in sorted(buckets):
            obs_list = buckets[key]
            pts = corners[[o.corner_id for o in obs_list]]
            px = np.array([[o.u, o.v] for o in obs_list])
            grp = _Group(key[0], key[1], np.ascontiguousarray(pts), px, row)
            row += grp.n_rows
            self.groups.append(grp)
        self.n_rows = row

        self.groups_by_cam: dict[int, list[int]] = {}
        self.groups_by_view: dict[int, list[int]] = {}
        for gi, grp in enumerate(self.groups):
            self.groups_by_cam.setdefault(grp.cam_idx, []).append(gi)
            self.groups_by_view.setdefault(grp.view_idx, []).append(gi)

    # state: (intr: list[np.ndarray], poses: (V,6), extrs: (C,6)) rotvec+t
    def state_from_params(self, params: ParameterSet):
        intr = [params.intrinsics[c].as_array() for c in self.camera_ids]
        poses = np.zeros((len(self.view_ids), 6))
        for v, vi in self.view_index.items():
            p = params.board_poses[v]
            poses[vi, :3] = p.rotvec()
            poses[vi, 3:] = p.t
        extrs = np.zeros((len(self.camera_ids), 6))
        for c, ci in self.cam_index.items():
            p = params.extrinsics.get(c, Pose.identity())
            extrs[ci, :3] = p.rotvec()
            extrs[ci, 3:] = p.t
        return intr, poses, extrs

    def params_from_state(self, state) -> ParameterSet:
        intr, poses, extrs = state
        intrinsics = {}
        for c, ci in self.cam_index.items():
            if self.models[ci] == PINHOLE:
                intrinsics[c] = PinholeIntrinsics.from_array(intr[ci])
            else:
                intrinsics[c] = DoubleSphereIntrinsics.from_array(intr[ci])
        board_poses = {
            v: Pose.from_rotvec(poses[vi, :3], poses[vi, 3:].copy())
            for v, vi in self.view_index.items()
        }
        extrinsics = {
            c: Pose.from_rotvec(extrs[ci, :3], extrs[ci, 3:].copy())
            for c, ci in self.cam_index.items()
        }
        return ParameterSet(intrinsics, board_poses, extrinsics)

    def group_residuals(self, state, gi: int) -> np.ndarray:
        intr, poses, extrs = state
        grp = self.groups[gi]
        R_e = rotvec_to_matrix(extrs[grp.cam_idx, :3])
        t_e = extrs[grp.cam_idx, 3:]
        R_v = rotvec_to_matrix(poses[grp.view_idx, :3])
        t_v = poses[grp.view_idx, 3:]
        R = R_e @ R_v
        t = R_e @ t_v + t_e
        if self.models[grp.cam_idx] == PINHOLE:
            uv = kernels.pinhole_project_rt(intr[grp.cam_idx], R, t, grp.pts, Z_MIN)
        else:
            uv = kernels.ds_project_rt(intr[grp.cam_idx], R, t, grp.pts)
        res = (uv - grp.px).ravel()
        bad = ~np.isfinite(res)
        if bad.any():
            res[bad] = INVALID_RESIDUAL
        return res

    def residuals(self, state, group_indices=None) -> np.ndarray:
        if group_indices is None:
            group_indices = range(len(self.groups))
        return np.concatenate([self.group_residuals(state, gi) for gi in group_indices])


def _huber_cost_and_weights(r: np.ndarray, delta: float | None):
    if delta is None:
        return float(r @ r), None
    e = np.sqrt(r[0::2] ** 2 + r[1::2] ** 2)
    small = e <= delta
    cost = float(np.sum(np.where(small, e * e, 2.0 * delta * e - delta * delta)))
    w_pt = np.where(small, 1.0, np.sqrt(delta / np.maximum(e, 1e-300)))
    return cost, np.repeat(w_pt, 2)


@dataclass
class _Block:
    kind: str  # "intr" | "pose" | "extr"
    index: int  # camera or view index
    size: int
    offset: int  # column offset in the parameter vector
    group_ids: list[int]
    rows: np.ndarray  # residual rows touched by this block


def _build_blocks(ev: _Evaluator, config: LmConfig, state) -> list[_Block]:
    intr, poses, extrs = state
    blocks: list[_Block] = []
    offset = 0

    def rows_for(group_ids):
        return np.concatenate(
            [
                np.arange(ev.groups[g].row0, ev.groups[g].row0 + ev.groups[g].n_rows)
                for g in group_ids
            ]
        )

    if config.refine_intrinsics:
        for ci in range(len(ev.camera_ids)):
            gids = ev.groups_by_cam.get(ci, [])
            if not gids:
                continue
            size = intr[ci].size
            blocks.append(_Block("intr", ci, size, offset, gids, rows_for(gids)))
            offset += size
    if config.refine_board_poses:
        for vi in range(len(ev.view_ids)):
            gids = ev.groups_by_view.get(vi, [])
            if not gids:
                continue
            blocks.append(_Block("pose", vi, 6, offset, gids, rows_for(gids)))
            offset += 6
    if config.refine_extrinsics and len(ev.camera_ids) > 1:
        for ci in range(1, len(ev.camera_ids)):  # camera 0 stays the gauge
            gids = ev.groups_by_cam.get(ci, [])
            if not gids:
                continue
            blocks.append(_Block("extr", ci, 6, offset, gids, rows_for(gids)))
            offset += 6
    return blocks


def _get_param(state, block: _Block, j: int) -> float:
    intr, poses, extrs = state
    if block.kind == "intr":
        return intr[block.index][j]
    if block.kind == "pose":
        return poses[block.index, j]
    return extrs[block.index, j]


def _set_param(state, block: _Block, j: int, value: float) -> None:
    intr, poses, extrs = state
    if block.kind == "intr":
        intr[block.index][j] = value
    elif block.kind == "pose":
        poses[block.index, j] = value
    else:
        extrs[block.index, j] = value


def _jacobian(ev: _Evaluator, state, blocks: list[_Block], n_params: int, weights):
    rows_acc = []
    cols_acc = []
    vals_acc = []
    for block in blocks:
        for j in range(block.size):
            old = _get_param(state, block, j)
            h = max(1e-6 * abs(old), 1e-9)
            _set_param(state, block, j, old + h)
            r_plus = ev.residuals(state, block.group_ids)
            _set_param(state, block, j, old - h)
            r_minus = ev.residuals(state, block.group_ids)
            _set_param(state, block, j, old)
            col = (r_plus - r_minus) / (2.0 * h)
            if weights is not None:
                col = col * weights[block.rows]
            rows_acc.append(block.rows)
            cols_acc.append(np.full(block.rows.size, block.offset + j))
            vals_acc.append(col)
    rows = np.concatenate(rows_acc)
    cols = np.concatenate(cols_acc)
    vals = np.concatenate(vals_acc)
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(ev.n_rows, n_params))


def _apply_step(state, blocks: list[_Block], delta: np.ndarray):
    intr, poses, extrs = state
    new_state = ([a.copy() for a in intr], poses.copy(), extrs.copy())
    for block in blocks:
        for j in range(block.size):
            val = _get_param(new_state, block, j) + delta[block.offset + j]
            _set_param(new_state, block, j, val)
    return new_state


def refine_lm(
    problem: CalibrationProblem, init: ParameterSet, config: LmConfig = LmConfig()
) -> CalibrationResult:
    """Minimize the summed squared reprojection error over the free blocks.

    Damping: lambda starts at lambda0, divides by lambda_factor on accepted
    steps and multiplies on rejections; terminates on relative cost change
    below cost_rel_tol, gradient below grad_tol, lambda above lambda_max, or
    max_iter accepted iterations. The trace records every accepted step.
    """
    ev = _Evaluator(problem)
    if not ev.groups:
        raise NotEnoughViews("problem contains no observations")
    state = ev.state_from_params(init)
    blocks = _build_blocks(ev, config, state)
    if not blocks:
        raise InvalidConfig("no free parameter blocks to refine")
    n_params = blocks[-1].offset + blocks[-1].size

    r = ev.residuals(state)
    if not np.all(np.isfinite(r)):
        raise InvalidConfig("initial parameters produce non-finite residuals")
    cost, weights = _huber_cost_and_weights(r, config.huber_delta_px)

    lam = config.lambda0
    trace: list[tuple[int, float, float]] = [(0, cost, lam)]
    it = 0
    termination = "max_iter"

    while it < config.max_iter:
        J = _jacobian(ev, state, blocks, n_params, weights)
        r_w = r if weights is None else r * weights
        g = J.T @ r_w
        if np.max(np.abs(g)) < config.grad_tol:
            termination = "gradient"
            break
        JtJ = (J.T @ J).toarray()
        diag = np.clip(np.diag(JtJ), 1e-12, None)

        stepped = False
        while lam <= config.lambda_max:
            A = JtJ + lam * np.diag(diag)
            try:
                delta = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= config.lambda_factor
                continue
            trial = _apply_step(state, blocks, delta)
            r_try = ev.residuals(trial)
            cost_try, weights_try = _huber_cost_and_weights(r_try, config.huber_delta_px)
            if cost_try < cost:
                rel_drop = (cost - cost_try) / max(cost, 1e-300)
                state, r, weights = trial, r_try, weights_try
                cost = cost_try
                it += 1
                trace.append((it, cost, lam))
                lam /= config.lambda_factor
                stepped = True
                if rel_drop < config.cost_rel_tol:
                    termination = "cost"
                break
            lam *= config.lambda_factor
        if not stepped:
            termination = "lambda"
            break
        if termination == "cost":
            break

    rms = math.sqrt((r @ r) / ev.n_rows)
    converged = termination in ("cost", "gradient")
    if termination == "lambda" and rms > config.fail_rms_px:
        raise DivergedOrStalled(
            f"damping exceeded {config.lambda_max:g} with RMS {rms:.3f} px"
        )

    params = ev.params_from_state(state)
    per_view = _per_view_rms(ev, r)
    per_cam = _per_camera_rms(ev, r)
    return CalibrationResult(
        camera_ids=list(ev.camera_ids),
        intrinsics=params.intrinsics,
        board_poses=params.board_poses,
        extrinsics=params.extrinsics,
        rms_px=rms,
        per_view_rms=per_view,
        per_camera_rms=per_cam,
        trace=trace,
        converged=converged,
        termination=termination,
    )


def _per_view_rms(ev: _Evaluator, r: np.ndarray) -> dict[int, float]:
    acc: dict[int, list[float]] = {}
    for grp in ev.groups:
        seg = r[grp.row0 : grp.row0 + grp.n_rows]
        view = ev.view_ids[grp.view_idx]
        acc.setdefault(view, []).append(float(seg @ seg))
        acc[view].append(grp.n_rows)
    out = {}
    for view, flat in acc.items():
        sq = sum(flat[0::2])
        n = sum(flat[1::2])
        out[view] = math.sqrt(sq / n)
    return out


def _per_camera_rms(ev: _Evaluator, r: np.ndarray) -> dict[str, float]:
    sq: dict[str, float] = {}
    n: dict[str, int] = {}
    for grp in ev.groups:
        seg = r[grp.row0 : grp.row0 + grp.n_rows]
        cam = ev.camera_ids[grp.cam_idx]
        sq[cam] = sq.get(cam, 0.0) + float(seg @ seg)
        n[cam] = n.get(cam, 0) + grp.n_rows
    return {cam: math.sqrt(sq[cam] / n[cam]) for cam in sq}


def rms_reprojection(problem: CalibrationProblem, params: ParameterSet) -> float:
    """sqrt(sum(du^2 + dv^2) / (2 * n_observations)): per-coordinate RMS."""
    ev = _Evaluator(problem)
    r = ev.residuals(ev.state_from_params(params))
    return math.sqrt((r @ r) / ev.n_rows)


# ---------------------------------------------------------------------------
# multi-camera extrinsics
# ---------------------------------------------------------------------------

def _average_poses(poses: list[Pose]) -> Pose:
    # quaternion mean via the principal eigenvector of sum(q q^T); sign-safe
    M = np.zeros((4, 4))
    for p in poses:
        q = p.q if p.q[0] >= 0 else -p.q
        M += np.outer(q, q)
    _, vecs = np.linalg.eigh(M)
    q = vecs[:, -1]
    if q[0] < 0:
        q = -q
    t = np.mean([p.t for p in poses], axis=0)
    return Pose(q, t)


def solve_extrinsics(
    problem: CalibrationProblem,
    intrinsics: dict[str, Intrinsics],
    cam_view_poses: dict[tuple[str, int], Pose],
    config: LmConfig = LmConfig(),
) -> CalibrationResult:
    """Initialize camera extrinsics from shared views and refine jointly.

    cam_view_poses maps (camera_id, view_id) to the board pose in that
    camera's frame, as produced by the per-camera intrinsic stage. Intrinsics
    stay frozen unless config.refine_intrinsics_jointly is set.
    """
    cams = problem.camera_ids
    if len(cams) < 2:
        raise InvalidConfig("extrinsic estimation needs at least 2 cameras")

    views_by_id: dict[int, list[str]] = {}
    for (cam, view) in cam_view_poses:
        if cam in set(cams):
            views_by_id.setdefault(view, []).append(cam)
    shared = {v: sorted(cs) for v, cs in views_by_id.items() if len(cs) >= 2}
    if not shared:
        raise InsufficientSharedViews("no view is co-observed by two or more cameras")

    edges: dict[tuple[str, str], list[int]] = {}
    for view, cs in shared.items():
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                edges.setdefault((cs[i], cs[j]), []).append(view)
    edges = {e: vs for e, vs in edges.items() if len(vs) >= config.min_shared_views}

    # connectivity from the reference camera
    adjacency: dict[str, list[str]] = {c: [] for c in cams}
    for (a, b) in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    seen = {cams[0]}
    frontier = [cams[0]]
    order = []
    while frontier:
        cur = frontier.pop(0)
        order.append(cur)
        for nxt in sorted(adjacency[cur]):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    if seen != set(cams):
        components = [sorted(seen)]
        rest = [c for c in cams if c not in seen]
        while rest:
            comp = {rest[0]}
            stack = [rest[0]]
            while stack:
                cur = stack.pop()
                for nxt in adjacency[cur]:
                    if nxt not in comp:
                        comp.add(nxt)
                        stack.append(nxt)
            components.append(sorted(comp))
            rest = [c for c in rest if c not in comp]
        raise DisconnectedGraph(components)

    def edge_pose(a: str, b: str) -> Pose:
        """Average relative pose mapping camera-a coordinates to camera b."""
        key = (a, b) if (a, b) in edges else (b, a)
        rels = []
        for view in edges[key]:
            T_a = cam_view_poses[(a, view)]
            T_b = cam_view_poses[(b, view)]
            rels.append(pose_compose(T_b, pose_inverse(T_a)))
        return _average_poses(rels)

    extrinsics: dict[str, Pose] = {cams[0]: Pose.identity()}
    pending = {c for c in cams if c != cams[0]}
    frontier = [cams[0]]
    while frontier:
        cur = frontier.pop(0)
        for nxt in sorted(adjacency[cur]):
            if nxt in pending:
                extrinsics[nxt] = pose_compose(edge_pose(cur, nxt), extrinsics[cur])
                pending.discard(nxt)
                frontier.append(nxt)

    board_poses: dict[int, Pose] = {}
    for view in problem.view_ids():
        for cam in cams:
            if (cam, view) in cam_view_poses:
                board_poses[view] = pose_compose(
                    pose_inverse(extrinsics[cam]), cam_view_poses[(cam, view)]
                )
                break
        else:
            raise InvalidConfig(f"view {view} has no initial pose from any camera")

    init = ParameterSet(dict(intrinsics), board_poses, extrinsics)
    joint_cfg = replace(config, refine_intrinsics=config.refine_intrinsics_jointly)
    return refine_lm(problem, init, joint_cfg)


# ---------------------------------------------------------------------------
# full pipeline driver
# ---------------------------------------------------------------------------

def calibrate(
    problem: CalibrationProblem,
    config: LmConfig = LmConfig(),
    image_sizes: dict[str, tuple[int, int]] | None = None,
    extrinsic_view_ids: list[int] | None = None,
) -> CalibrationResult:
    """Per-camera intrinsics (init + LM), then joint extrinsics when the
    problem has two or more cameras. extrinsic_view_ids restricts the joint
    stage (typically to the fully synchronized views)."""
    corners2d = problem.target.points2d()
    per_cam_results: dict[str, CalibrationResult] = {}
    cam_view_poses: dict[tuple[str, int], Pose] = {}
    stages: dict[str, dict] = {}

    for cam in problem.camera_ids:
        sub = problem.restrict(camera_ids=[cam])
        views: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for view in sub.view_ids():
            obs = [o for o in sub.observations if o.view_id == view]
            if len(obs) < 4:
                continue
            ids = [o.corner_id for o in obs]
            views[view] = (corners2d[ids], np.array([[o.u, o.v] for o in obs]))
        if len(views) < 3:
            raise NotEnoughViews(
                f"camera {cam!r}: {len(views)} usable views, need >= 3"
            )
        sub = sub.restrict(view_ids=list(views))

        if problem.models[cam] == PINHOLE:
            homographies = {
                v: estimate_homography(pts, px) for v, (pts, px) in views.items()
            }
            K0 = init_pinhole_intrinsics(list(homographies.values()))
            K_mat = np.array([[K0.fx, 0, K0.cx], [0, K0.fy, K0.cy], [0, 0, 1]])
            poses = {v: pose_from_homography(K_mat, H) for v, H in homographies.items()}
        else:
            if not image_sizes or cam not in image_sizes:
                raise InvalidConfig(
                    f"camera {cam!r}: double-sphere initialization needs the image size"
                )
            K0, poses = init_double_sphere(
                views, image_sizes[cam], config.assumed_fov_deg
            )

        init = ParameterSet({cam: K0}, poses, {cam: Pose.identity()})
        res = refine_lm(sub, init, replace(config, refine_extrinsics=False))
        per_cam_results[cam] = res
        for v, pose in res.board_poses.items():
            cam_view_poses[(cam, v)] = pose
        stages[f"intrinsics:{cam}"] = {
            "rms_px": res.rms_px,
            "trace": res.trace,
            "termination": res.termination,
        }

    intrinsics = {cam: per_cam_results[cam].intrinsics[cam] for cam in problem.camera_ids}
    per_camera_rms = {cam: per_cam_results[cam].rms_px for cam in problem.camera_ids}

    if len(problem.camera_ids) == 1:
        cam = problem.camera_ids[0]
        result = per_cam_results[cam]
        result.stages = stages
        return result

    joint_views = extrinsic_view_ids
    if joint_views is None:
        counts: dict[int, int] = {}
        for (c, v) in cam_view_poses:
            counts[v] = counts.get(v, 0) + 1
        joint_views = [v for v, n in counts.items() if n >= 2]
    joint_problem = problem.restrict(view_ids=joint_views)
    result = solve_extrinsics(joint_problem, intrinsics, cam_view_poses, config)
    result.per_camera_rms = {**per_camera_rms, **result.per_camera_rms}
    result.intrinsics = intrinsics if not config.refine_intrinsics_jointly else result.intrinsics
    stages["extrinsics"] = {
        "rms_px": result.rms_px,
        "trace": result.trace,
        "termination": result.termination,
    }
    result.stages = stages
    return result


# ---------------------------------------------------------------------------
# file interfaces
# ---------------------------------------------------------------------------

def read_observations(path) -> list[Observation]:
    """CSV rows: camera_id,view_id,corner_id,u,v (no header)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    out: list[Observation] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise MalformedRow(lineno, f"expected 5 fields, got {len(parts)}")
            try:
                out.append(
                    Observation(
                        camera_id=parts[0],
                        view_id=int(parts[1]),
                        corner_id=int(parts[2]),
                        u=float(parts[3]),
                        v=float(parts[4]),
                    )
                )
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from None
    return out


def write_observations(observations: list[Observation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for o in observations:
            fh.write(f"{o.camera_id},{o.view_id},{o.corner_id},{o.u!r},{o.v!r}\n")


def result_to_dict(result: CalibrationResult) -> dict:
    return {
        "camera_ids": result.camera_ids,
        "cameras": {
            cam: {
                **intrinsics_to_dict(result.intrinsics[cam]),
                "rms_px": result.per_camera_rms.get(cam),
            }
            for cam in result.camera_ids
        },
        "extrinsics": {cam: pose_to_dict(p) for cam, p in result.extrinsics.items()},
        "board_poses": {str(v): pose_to_dict(p) for v, p in result.board_poses.items()},
        "rms_px": result.rms_px,
        "per_view_rms": {str(v): rms for v, rms in result.per_view_rms.items()},
        "trace": [
            {"iter": it, "cost": cost, "lambda": lam} for it, cost, lam in result.trace
        ],
        "converged": result.converged,
        "termination": result.termination,
        "stages": {
            name: {
                "rms_px": stage["rms_px"],
                "termination": stage["termination"],
                "trace": [
                    {"iter": it, "cost": cost, "lambda": lam}
                    for it, cost, lam in stage["trace"]
                ],
            }
            for name, stage in result.stages.items()
        },
    }


def save_result(result: CalibrationResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def result_from_dict(doc: dict) -> CalibrationResult:
    try:
        camera_ids = list(doc["camera_ids"])
        intrinsics = {cam: intrinsics_from_dict(doc["cameras"][cam]) for cam in camera_ids}
        extrinsics = {cam: pose_from_dict(p) for cam, p in doc["extrinsics"].items()}
        board_poses = {int(v): pose_from_dict(p) for v, p in doc["board_poses"].items()}
        trace = [(e["iter"], e["cost"], e["lambda"]) for e in doc["trace"]]
        per_view = {int(v): float(r) for v, r in doc["per_view_rms"].items()}
        per_cam = {
            cam: float(doc["cameras"][cam]["rms_px"])
            for cam in camera_ids
            if doc["cameras"][cam].get("rms_px") is not None
        }
        stages = {
            name: {
                "rms_px": stage["rms_px"],
                "termination": stage["termination"],
                "trace": [(e["iter"], e["cost"], e["lambda"]) for e in stage["trace"]],
            }
            for name, stage in doc.get("stages", {}).items()
        }
        return CalibrationResult(
            camera_ids=camera_ids,
            intrinsics=intrinsics,
            board_poses=board_poses,
            extrinsics=extrinsics,
            rms_px=float(doc["rms_px"]),
            per_view_rms=per_view,
            per_camera_rms=per_cam,
            trace=trace,
            converged=bool(doc.get("converged", False)),
            termination=str(doc.get("termination", "")),
            stages=stages,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResult(f"bad result file: {exc}") from None


def load_result(path) -> CalibrationResult:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedResult(f"invalid JSON: {exc}") from None
    return result_from_dict(doc)
