"""Camera projection models and rigid poses.

Two models: the standard pinhole with 3 radial + 2 tangential distortion
coefficients, and the double-sphere fisheye model with sphere offset xi and
blending alpha. Points live in the camera frame (meters, z forward), pixels
in image coordinates.

Double-sphere projection:

    d1 = |p|,  d2 = sqrt(x^2 + y^2 + (xi*d1 + z)^2)
    u = fx * x / (alpha*d2 + (1-alpha)*(xi*d1 + z)) + cx   (v analogous)

valid iff z > -w2*d1 with w1 = alpha/(1-alpha) for alpha <= 0.5 (else its
reciprocal) and w2 = (w1 + xi) / sqrt(2*w1*xi + xi^2 + 1).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    BehindCamera,
    InvariantViolation,
    MalformedResult,
    NoConvergence,
    OutsideDomain,
    OutsideValidRegion,
)

Z_MIN = 1e-6  # meters; guards the pinhole division


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantViolation("pinhole intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2]
        )

    @staticmethod
    def from_array(a) -> "PinholeIntrinsics":
        return PinholeIntrinsics(*(float(v) for v in a))


@dataclass(frozen=True)
class DoubleSphereIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    xi: float
    alpha: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.xi, self.alpha)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantViolation("double-sphere intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvariantViolation("alpha must lie in (0, 1)")

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.xi, self.alpha])

    @staticmethod
    def from_array(a) -> "DoubleSphereIntrinsics":
        return DoubleSphereIntrinsics(*(float(v) for v in a))


Intrinsics = PinholeIntrinsics | DoubleSphereIntrinsics


# ---------------------------------------------------------------------------
# quaternion / rotation helpers (w, x, y, z convention)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise InvariantViolation("degenerate quaternion")
    return q / n

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )

def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )

def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the numerically largest pivot
    m00, m01, m02 = R[0]
    m10, m11, m12 = R[1]
    m20, m21, m22 = R[2]
    tr = m00 + m11 + m22
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif m00 >= m11 and m00 >= m22:
        s = math.sqrt(1.0 + m00 - m11 - m22) * 2
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 >= m22:
        s = math.sqrt(1.0 + m11 - m00 - m22) * 2
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = math.sqrt(1.0 + m22 - m00 - m11) * 2
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    return quat_normalize(q)

def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta < 1e-12:
        # sin(t/2)/t ~ 1/2 - t^2/48 for small t
        factor = 0.5 - theta * theta / 48.0
        return quat_normalize(np.array([1.0, *(factor * v)]))
    half = theta / 2.0
    return np.array([math.cos(half), *(math.sin(half) / theta * v)])

def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    vec = q[1:]
    n = np.linalg.norm(vec)
    if n < 1e-12:
        return 2.0 * vec
    theta = 2.0 * math.atan2(n, q[0])
    return theta / n * vec

def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(rotvec_to_quat(v))


@dataclass(frozen=True)
class Pose:
    """Rigid transform p_out = R p_in + t; q is a unit quaternion (w,x,y,z)."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvariantViolation("translation must be a finite 3-vector")
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(R: np.ndarray, t) -> "Pose":
        return Pose(matrix_to_quat(np.asarray(R, dtype=np.float64)), t)

    @staticmethod
    def from_rotvec(v, t) -> "Pose":
        return Pose(rotvec_to_quat(np.asarray(v, dtype=np.float64)), t)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.q)


def pose_transform(T: Pose, p) -> np.ndarray:
    return T.rotation_matrix() @ np.asarray(p, dtype=np.float64) + T.t

def pose_compose(A: Pose, B: Pose) -> Pose:
    """A after B: (A*B)(p) = A(B(p))."""
    return Pose(quat_mul(A.q, B.q), A.rotation_matrix() @ B.t + A.t)

def pose_inverse(T: Pose) -> Pose:
    q_inv = np.array([T.q[0], -T.q[1], -T.q[2], -T.q[3]])
    return Pose(q_inv, -(quat_to_matrix(q_inv) @ T.t))

def rotation_angle_deg(A: Pose, B: Pose) -> float:
    """Angle of the relative rotation between two poses, degrees."""
    rel = quat_mul(A.q, np.array([B.q[0], -B.q[1], -B.q[2], -B.q[3]]))
    w = min(1.0, abs(float(rel[0])))
    return math.degrees(2.0 * math.acos(w))


# ---------------------------------------------------------------------------
# pinhole model
# ---------------------------------------------------------------------------

def pinhole_project(K: PinholeIntrinsics, p) -> tuple[float, float]:
    x3, y3, z3 = (float(v) for v in p)
    if z3 <= Z_MIN:
        raise BehindCamera(f"z = {z3} <= {Z_MIN}")
    x = x3 / z3
    y = y3 / z3
    r2 = x * x + y * y
    rad = 1.0 + r2 * (K.k1 + r2 * (K.k2 + r2 * K.k3))
    xd = x * rad + 2.0 * K.p1 * x * y + K.p2 * (r2 + 2.0 * x * x)
    yd = y * rad + K.p1 * (r2 + 2.0 * y * y) + 2.0 * K.p2 * x * y
    return (K.fx * xd + K.cx, K.fy * yd + K.cy)


def pinhole_unproject(
    K: PinholeIntrinsics, px, tol: float = 1e-10, max_iter: int = 50
) -> np.ndarray:
    """Invert the distortion by fixed-point iteration; returns (x', y', 1).

    Divergence or a residual step above 1e-6 after max_iter signals a pixel
    outside the model's invertible region.
    """
    u, v = (float(c) for c in px)
    xd = (u - K.cx) / K.fx
    yd = (v - K.cy) / K.fy
    x, y = xd, yd
    step = 0.0
    for _ in range(max_iter):
        r2 = x * x + y * y
        rad = 1.0 + r2 * (K.k1 + r2 * (K.k2 + r2 * K.k3))
        if not math.isfinite(rad) or abs(rad) < 1e-12:
            raise NoConvergence(f"distortion factor degenerate at pixel ({u}, {v})")
        tx = 2.0 * K.p1 * x * y + K.p2 * (r2 + 2.0 * x * x)
        ty = K.p1 * (r2 + 2.0 * y * y) + 2.0 * K.p2 * x * y
        x_new = (xd - tx) / rad
        y_new = (yd - ty) / rad
        if not (math.isfinite(x_new) and math.isfinite(y_new)):
            raise NoConvergence(f"undistortion diverged at pixel ({u}, {v})")
        step = math.hypot(x_new - x, y_new - y)
        x, y = x_new, y_new
        if step < tol:
            break
    if step >= 1e-6:
        raise NoConvergence(
            f"undistortion did not converge at pixel ({u}, {v}); last step {step:g}"
        )
    return np.array([x, y, 1.0])


def pinhole_project_many(K: PinholeIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Batch projection; rows behind the camera come back NaN."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    return kernels.pinhole_project_rt(K.as_array(), np.eye(3), np.zeros(3), pts, Z_MIN)


# ---------------------------------------------------------------------------
# double-sphere model
# ---------------------------------------------------------------------------

def _ds_w2(xi: float, alpha: float) -> float:
    w1 = alpha / (1.0 - alpha) if alpha <= 0.5 else (1.0 - alpha) / alpha
    return (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)


def ds_valid(K: DoubleSphereIntrinsics, p) -> bool:
    x, y, z = (float(v) for v in p)
    d1 = math.sqrt(x * x + y * y + z * z)
    return z > -_ds_w2(K.xi, K.alpha) * d1


def ds_project(K: DoubleSphereIntrinsics, p) -> tuple[float, float]:
    x, y, z = (float(v) for v in p)
    if not ds_valid(K, p):
        raise OutsideValidRegion(f"point ({x}, {y}, {z}) outside the projectable cone")
    d1 = math.sqrt(x * x + y * y + z * z)
    zeta = K.xi * d1 + z
    d2 = math.sqrt(x * x + y * y + zeta * zeta)
    denom = K.alpha * d2 + (1.0 - K.alpha) * zeta
    if denom <= 1e-12:
        raise OutsideValidRegion(f"degenerate denominator for point ({x}, {y}, {z})")
    return (K.fx * x / denom + K.cx, K.fy * y / denom + K.cy)


def ds_unproject(K: DoubleSphereIntrinsics, px) -> np.ndarray:
    """Closed-form inverse; returns a unit direction."""
    u, v = (float(c) for c in px)
    mx = (u - K.cx) / K.fx
    my = (v - K.cy) / K.fy
    r2 = mx * mx + my * my
    if K.alpha > 0.5 and r2 > 1.0 / (2.0 * K.alpha - 1.0):
        raise OutsideDomain(f"pixel ({u}, {v}): r^2 = {r2:g} beyond unprojection domain")
    mz = (1.0 - K.alpha * K.alpha * r2) / (
        K.alpha * math.sqrt(1.0 - (2.0 * K.alpha - 1.0) * r2) + 1.0 - K.alpha
    )
    disc = mz * mz + (1.0 - K.xi * K.xi) * r2
    if disc < 0:
        raise OutsideDomain(f"pixel ({u}, {v}): no ray for xi = {K.xi}")
    s = (mz * K.xi + math.sqrt(disc)) / (mz * mz + r2)
    d = np.array([s * mx, s * my, s * mz - K.xi])
    return d / np.linalg.norm(d)


def ds_project_many(K: DoubleSphereIntrinsics, pts: np.ndarray) -> np.ndarray:
    """Batch projection; invalid rows come back NaN."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    return kernels.ds_project_rt(K.as_array(), np.eye(3), np.zeros(3), pts)


def project(K: Intrinsics, p) -> tuple[float, float]:
    if isinstance(K, PinholeIntrinsics):
        return pinhole_project(K, p)
    return ds_project(K, p)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def intrinsics_to_dict(K: Intrinsics) -> dict:
    if isinstance(K, PinholeIntrinsics):
        model = "pinhole"
        params = {
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
            "k1": K.k1, "k2": K.k2, "k3": K.k3, "p1": K.p1, "p2": K.p2,
        }
    else:
        model = "double_sphere"
        params = {
            "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
            "xi": K.xi, "alpha": K.alpha,
        }
    return {"model": model, "params": params}


def intrinsics_from_dict(doc: dict) -> Intrinsics:
    try:
        model = doc["model"]
        params = doc["params"]
        if model == "pinhole":
            return PinholeIntrinsics(**params)
        if model == "double_sphere":
            return DoubleSphereIntrinsics(**params)
    except (KeyError, TypeError) as exc:
        raise MalformedResult(f"bad intrinsics record: {exc}") from None
    raise MalformedResult(f"unknown camera model {model!r}")


def pose_to_dict(T: Pose) -> dict:
    return {"q": [float(v) for v in T.q], "t": [float(v) for v in T.t]}


def pose_from_dict(doc: dict) -> Pose:
    try:
        return Pose(np.array(doc["q"], dtype=np.float64), np.array(doc["t"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResult(f"bad pose record: {exc}") from None
