"""Synthetic calibration sessions with known ground truth.

Generates a full on-disk session (manifest, frame indices, blur-graded PNM
frames, WAV audio with claps and trigger markers, word-timestamped
transcript, noisy corner observations) plus a ground_truth.json sidecar, in
exactly the formats the pipeline consumes. Generation is single threaded and
fully determined by the seed.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage

from .calib_solver import Observation, TargetGeometry, write_observations
from .camera_models import (
    DoubleSphereIntrinsics,
    Intrinsics,
    PinholeIntrinsics,
    Pose,
    ds_project_many,
    intrinsics_from_dict,
    intrinsics_to_dict,
    pinhole_project_many,
    pose_compose,
    pose_from_dict,
    pose_inverse,
    pose_to_dict,
    rotation_angle_deg,
    rotvec_to_matrix,
)
from .errors import InvalidConfig, MissingGroundTruth
from .session_store import ImageBuffer, SessionManifest, load_manifest, save_pnm, save_wav

GROUND_TRUTH_NAME = "ground_truth.json"
CALIB_META_NAME = "calib_meta.json"

_FILLER_WORDS = ["okay", "hold", "steady", "next", "moving", "here", "good"]
_TRIGGER_SPELLINGS = ["Capture!", "capture", "Capture.", "Capture"]


@dataclass
class SynthCamera:
    camera_id: str
    model: str  # "pinhole" | "double_sphere"
    image_size: tuple[int, int] | None = None
    intrinsics: Intrinsics | None = None  # None: drawn from the seeded defaults


@dataclass
class SynthConfig:
    seed: int = 42
    n_events: int = 50
    cameras: list[SynthCamera] = field(default_factory=list)
    fps: float = 15.0
    audio_sample_rate: int = 16000
    pixel_noise_px: float = 0.2
    transcript_jitter_s: float = 0.030
    anchor_jitter_s: float = 0.0
    clock_scale: float = 1.00005
    clock_offset_s: float = 1.7002e9
    trigger_word: str = "capture"
    board_rows: int = 6
    board_cols: int = 6
    board_spacing_m: float = 0.2
    distance_range_m: tuple[float, float] = (1.2, 3.5)
    max_tilt_deg: float = 50.0
    event_spacing_s: float = 5.0
    blur_neighborhood: int = 3  # materialized frames around each sharp frame
    spotter_mode: bool = False
    frame_gaps: list[dict] = field(default_factory=list)  # {camera, start_s, end_s}
    # fraction of events placed far off-axis for the widest-FOV cameras, so
    # fisheye parameters are constrained out to large image radii
    wide_event_fraction: float = 0.35

    def __post_init__(self):
        if not self.cameras:
            self.cameras = default_rig()
        if self.n_events < 1:
            raise InvalidConfig("n_events must be >= 1")
        if self.fps <= 0:
            raise InvalidConfig("fps must be positive")
        if self.pixel_noise_px < 0 or self.transcript_jitter_s < 0 or self.anchor_jitter_s < 0:
            raise InvalidConfig("noise levels must be >= 0")
        if self.blur_neighborhood < 2:
            raise InvalidConfig("blur neighborhood must cover the refinement radius (>= 2)")


def default_rig() -> list[SynthCamera]:
    """4 pinhole cameras plus one double-sphere fisheye, mirroring the
    experimental setup the pipeline targets."""
    cams = [SynthCamera(f"cam{i}", "pinhole", (800, 600)) for i in range(4)]
    cams.append(SynthCamera("cam4", "double_sphere", (1280, 960)))
    return cams


_CONFIG_KEYS = {
    "seed", "n_events", "cameras", "fps", "audio_sample_rate", "pixel_noise_px",
    "transcript_jitter_s", "anchor_jitter_s", "clock_scale", "clock_offset_s",
    "trigger_word", "board_rows", "board_cols", "board_spacing_m",
    "distance_range_m", "max_tilt_deg", "event_spacing_s", "blur_neighborhood",
    "spotter_mode", "frame_gaps", "wide_event_fraction",
}
_CAMERA_KEYS = {"id", "model", "image_size", "intrinsics"}


def config_from_dict(doc: dict) -> SynthConfig:
    if not isinstance(doc, dict):
        raise InvalidConfig("config must be a JSON object")
    for key in doc:
        if key not in _CONFIG_KEYS:
            raise InvalidConfig(f"unknown config key {key!r}")
    kwargs = dict(doc)
    if "cameras" in kwargs:
        cams = []
        for i, entry in enumerate(kwargs["cameras"]):
            if not isinstance(entry, dict):
                raise InvalidConfig(f"cameras[{i}]: expected object")
            for key in entry:
                if key not in _CAMERA_KEYS:
                    raise InvalidConfig(f"cameras[{i}]: unknown key {key!r}")
            if "id" not in entry or "model" not in entry:
                raise InvalidConfig(f"cameras[{i}]: id and model are required")
            size = tuple(entry["image_size"]) if "image_size" in entry else None
            intr = intrinsics_from_dict(entry["intrinsics"]) if "intrinsics" in entry else None
            cams.append(SynthCamera(entry["id"], entry["model"], size, intr))
        kwargs["cameras"] = cams
    if "distance_range_m" in kwargs:
        kwargs["distance_range_m"] = tuple(kwargs["distance_range_m"])
    return SynthConfig(**kwargs)


# ---------------------------------------------------------------------------
# ground-truth parameter sampling
# ---------------------------------------------------------------------------

_DEFAULT_SIZES = {"pinhole": (800, 600), "double_sphere": (1280, 960)}


def _draw_intrinsics(cam: SynthCamera, rng: np.random.Generator):
    size = cam.image_size or _DEFAULT_SIZES[cam.model]
    w, h = size
    if cam.intrinsics is not None:
        return cam.intrinsics, size
    if cam.model == "pinhole":
        fx = rng.uniform(0.55, 0.65) * w
        K = PinholeIntrinsics(
            fx=fx,
            fy=fx * rng.uniform(0.995, 1.005),
            cx=w / 2 + rng.uniform(-8, 8),
            cy=h / 2 + rng.uniform(-8, 8),
            k1=rng.uniform(-0.25, -0.10),
            k2=rng.uniform(0.02, 0.08),
            k3=rng.uniform(-0.004, 0.004),
            p1=rng.uniform(-5e-4, 5e-4),
            p2=rng.uniform(-5e-4, 5e-4),
        )
    elif cam.model == "double_sphere":
        fx = rng.uniform(0.26, 0.30) * w
        K = DoubleSphereIntrinsics(
            fx=fx,
            fy=fx * rng.uniform(0.995, 1.005),
            cx=w / 2 + rng.uniform(-8, 8),
            cy=h / 2 + rng.uniform(-8, 8),
            xi=rng.uniform(-0.30, -0.15),
            alpha=rng.uniform(0.55, 0.65),
        )
    else:
        raise InvalidConfig(f"camera {cam.camera_id!r}: unknown model {cam.model!r}")
    return K, size


def _look_at_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation for a y-down camera looking at target."""
    z = target - position
    z = z / np.linalg.norm(z)
    x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _rig_extrinsics(n_cameras: int, rng: np.random.Generator) -> list[Pose]:
    """Reference-to-camera transforms for a small convergent rig; camera 0 is
    the identity."""
    aim = np.array([0.0, 0.0, 2.5])
    poses = [Pose.identity()]
    for i in range(1, n_cameras):
        side = (i + 1) // 2 * (1 if i % 2 else -1)
        position = np.array(
            [0.40 * side + rng.uniform(-0.03, 0.03),
             rng.uniform(-0.08, 0.08),
             rng.uniform(-0.05, 0.05)]
        )
        R_wc = _look_at_rotation(position, aim)
        poses.append(Pose.from_matrix(R_wc.T, -R_wc.T @ position))
    return poses


def _project_with(K: Intrinsics, pts_cam: np.ndarray) -> np.ndarray:
    if isinstance(K, PinholeIntrinsics):
        return pinhole_project_many(K, pts_cam)
    return ds_project_many(K, pts_cam)


def _visible_mask(K, T, size, pts_world, margin=12.0, min_z=0.25) -> np.ndarray:
    """Per-corner visibility of world points in one camera."""
    w, h = size
    pts_cam = pts_world @ T.rotation_matrix().T + T.t
    uv = _project_with(K, pts_cam)
    ok = np.all(np.isfinite(uv), axis=1)
    if isinstance(K, PinholeIntrinsics):
        ok &= pts_cam[:, 2] >= min_z
    ok &= (uv[:, 0] >= margin) & (uv[:, 0] <= w - margin)
    ok &= (uv[:, 1] >= margin) & (uv[:, 1] <= h - margin)
    return ok


def _sample_board_pose(cfg, target, extrinsics, intrinsics, sizes, rng, required) -> Pose:
    """Board-to-reference pose with every corner visible in the cameras listed
    in `required` (indices). Wide placements pass a subset."""
    corners = target.points3d()
    offset = np.array(
        [(target.cols - 1) * target.spacing / 2.0,
         (target.rows - 1) * target.spacing / 2.0,
         0.0]
    )
    max_tilt = math.radians(cfg.max_tilt_deg)
    wide = len(required) < len(intrinsics)
    for _ in range(2000):
        if wide:
            yaw = rng.choice([-1.0, 1.0]) * rng.uniform(0.45, 0.95)
            pitch = rng.uniform(-0.45, 0.45)
            dist = rng.uniform(max(cfg.distance_range_m[0], 1.0), 2.2)
        else:
            yaw = rng.uniform(-0.55, 0.55)
            pitch = rng.uniform(-0.32, 0.32)
            dist = rng.uniform(*cfg.distance_range_m)
        direction = np.array([math.tan(yaw), math.tan(pitch), 1.0])
        center = dist * direction / np.linalg.norm(direction)

        z_b = -center / np.linalg.norm(center)  # board normal faces the rig
        x_b = np.cross(np.array([0.0, 1.0, 0.0]), z_b)
        x_b = x_b / np.linalg.norm(x_b)
        y_b = np.cross(z_b, x_b)
        R0 = np.column_stack([x_b, y_b, z_b])
        phi = rng.uniform(0, 2 * math.pi)
        tilt = rng.uniform(0.15, max_tilt)
        roll = rng.uniform(0, 2 * math.pi)
        R_tilt = rotvec_to_matrix(np.array([math.cos(phi), math.sin(phi), 0.0]) * tilt)
        R_roll = rotvec_to_matrix(np.array([0.0, 0.0, 1.0]) * roll)
        R_wb = R0 @ R_tilt @ R_roll

        t_wb = center - R_wb @ offset
        pts_world = corners @ R_wb.T + t_wb
        if all(
            bool(_visible_mask(intrinsics[i], extrinsics[i], sizes[i], pts_world).all())
            for i in required
        ):
            return Pose.from_matrix(R_wb, t_wb)
    raise InvalidConfig(
        "board sampler failed: no pose visible in the required cameras (check rig/board config)"
    )


# ---------------------------------------------------------------------------
# audio / transcript / image synthesis
# ---------------------------------------------------------------------------

def gaussian_blur(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Blur a float image; sigma 0 returns a copy."""
    if sigma <= 0:
        return pixels.copy()
    return scipy.ndimage.gaussian_filter(pixels, sigma)


def make_texture(rng: np.random.Generator, width: int = 64, height: int = 48) -> np.ndarray:
    """High-frequency random texture stretched into [10, 245] (float image)."""
    raw = rng.integers(0, 256, size=(height, width)).astype(np.float64)
    smooth = scipy.ndimage.gaussian_filter(raw, 0.6)
    lo, hi = smooth.min(), smooth.max()
    return 10.0 + 235.0 * (smooth - lo) / max(hi - lo, 1e-9)


def make_chirp_template(rate: int, duration_s: float = 0.6) -> np.ndarray:
    """Hann-enveloped linear chirp used as the spotter keyword."""
    n = int(duration_s * rate)
    t = np.arange(n) / rate
    f0, f1 = 300.0, 2500.0
    phase = 2 * math.pi * (f0 * t + 0.5 * (f1 - f0) / duration_s * t * t)
    return 0.5 * np.sin(phase) * np.hanning(n)


def _clap_burst(rate: int) -> np.ndarray:
    """5 ms cosine burst with exponential decay; peak amplitude 0.9 at onset."""
    n = int(0.005 * rate)
    t = np.arange(n) / rate
    return 0.9 * np.exp(-t / 0.002) * np.cos(2 * math.pi * 3000.0 * t)


def _tone_marker(rate: int, duration_s: float = 0.25) -> np.ndarray:
    n = int(duration_s * rate)
    t = np.arange(n) / rate
    return 0.15 * np.sin(2 * math.pi * 800.0 * t) * np.hanning(n)


def _add_at(signal: np.ndarray, snippet: np.ndarray, start_sample: int) -> None:
    s = max(0, start_sample)
    e = min(signal.size, start_sample + snippet.size)
    if e > s:
        signal[s:e] += snippet[s - start_sample : e - start_sample]


def _truncated_normal(rng, sigma: float, clip_sigmas: float = 2.0) -> float:
    if sigma <= 0:
        return 0.0
    return float(np.clip(rng.normal(0.0, sigma), -clip_sigmas * sigma, clip_sigmas * sigma))


# ---------------------------------------------------------------------------
# session generation
# ---------------------------------------------------------------------------

def _epoch_of(cfg: SynthConfig, audio_time_s: float) -> int:
    return round((cfg.clock_scale * audio_time_s + cfg.clock_offset_s) * 1e9)


def generate_session(cfg: SynthConfig, out_dir) -> tuple[SessionManifest, dict]:
    """Write a complete session under out_dir; returns the loaded manifest and
    the ground-truth document."""
    out = Path(out_dir)
    (out / "index").mkdir(parents=True, exist_ok=True)
    (out / "frames").mkdir(exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    target = TargetGeometry(cfg.board_rows, cfg.board_cols, cfg.board_spacing_m)

    intrinsics = []
    sizes = []
    for cam in cfg.cameras:
        K, size = _draw_intrinsics(cam, rng)
        intrinsics.append(K)
        sizes.append(size)
    extrinsics = _rig_extrinsics(len(cfg.cameras), rng)

    # --- event times, words and jitters -----------------------------------
    lead_in, lead_out = 8.0, 8.0
    event_times = [
        lead_in + k * cfg.event_spacing_s + rng.uniform(-0.2, 0.2) * cfg.event_spacing_s
        for k in range(cfg.n_events)
    ]
    durations = [rng.uniform(0.35, 0.55) for _ in event_times]
    jitters = [
        (
            _truncated_normal(rng, cfg.transcript_jitter_s),
            _truncated_normal(rng, cfg.transcript_jitter_s),
        )
        for _ in event_times
    ]
    duration_s = event_times[-1] + lead_out
    rate = cfg.audio_sample_rate

    # --- frame stamps (uniform in each camera's epoch clock) ---------------
    period_ns = 1e9 / cfg.fps
    n_frames = int(duration_s * cfg.fps) + 2
    phases = [rng.uniform(0.0, 0.020) for _ in cfg.cameras]
    stamps_per_cam = []
    for phase in phases:
        start = _epoch_of(cfg, phase)
        stamps = start + np.round(np.arange(n_frames) * period_ns).astype(np.int64)
        stamps_per_cam.append(stamps)

    gaps = [
        (g["camera"], _epoch_of(cfg, float(g["start_s"])), _epoch_of(cfg, float(g["end_s"])))
        for g in cfg.frame_gaps
    ]
    kept_per_cam = []
    for cam, stamps in zip(cfg.cameras, stamps_per_cam):
        keep = np.ones(stamps.size, dtype=bool)
        for gap_cam, lo, hi in gaps:
            if gap_cam == cam.camera_id:
                keep &= ~((stamps >= lo) & (stamps <= hi))
        kept_per_cam.append(stamps[keep])

    # --- nudge events away from nearest-frame decision boundaries ----------
    # guarantees that any resolver within ~3 ms of the true epoch lands on the
    # intended sharp frame, making frame-selection checks deterministic
    margin_ns = 3e6

    def boundary_margin(epoch: int) -> float:
        worst = math.inf
        for stamps in kept_per_cam:
            d = np.abs(stamps - epoch)
            two = np.partition(d, 1)[:2]
            worst = min(worst, (float(two[1]) - float(two[0])) / 2.0)
        return worst

    midpoints = []
    for k, t_k in enumerate(event_times):
        j_mid = (jitters[k][0] + jitters[k][1]) / 2.0
        shift = 0.0
        for attempt in range(40):
            mid = t_k + shift + j_mid
            if boundary_margin(_epoch_of(cfg, mid)) > margin_ns:
                break
            shift = (attempt // 2 + 1) * 0.004 * (1 if attempt % 2 == 0 else -1)
        event_times[k] = t_k + shift
        midpoints.append(event_times[k] + j_mid)

    # --- sharp frame per (event, camera) -----------------------------------
    sharp_frames: list[dict[str, int]] = []
    for mid in midpoints:
        epoch = _epoch_of(cfg, mid)
        per_cam = {}
        for cam, stamps in zip(cfg.cameras, kept_per_cam):
            per_cam[cam.camera_id] = int(np.argmin(np.abs(stamps - epoch)))
        sharp_frames.append(per_cam)

    # --- board poses and observations ---------------------------------------
    # most events sit in the all-camera cone; the rest sweep the widest-FOV
    # cameras far off-axis so their parameters see large image radii
    corners = target.points3d()
    all_idx = list(range(len(cfg.cameras)))
    wide_idx = [i for i, cam in enumerate(cfg.cameras) if cam.model == "double_sphere"]
    board_poses = []
    observations: list[Observation] = []
    wide_cycle = 0
    for k in range(cfg.n_events):
        wide = bool(wide_idx) and rng.uniform() < cfg.wide_event_fraction
        if wide:
            required = [wide_idx[wide_cycle % len(wide_idx)]]
            wide_cycle += 1
        else:
            required = all_idx
        pose = _sample_board_pose(cfg, target, extrinsics, intrinsics, sizes, rng, required)
        board_poses.append(pose)
        pts_world = corners @ pose.rotation_matrix().T + pose.t
        for cam, K, T, size in zip(cfg.cameras, intrinsics, extrinsics, sizes):
            mask = _visible_mask(K, T, size, pts_world)
            if mask.sum() < 10:
                continue
            pts_cam = pts_world[mask] @ T.rotation_matrix().T + T.t
            uv = _project_with(K, pts_cam)
            if cfg.pixel_noise_px > 0:
                uv = uv + rng.normal(0.0, cfg.pixel_noise_px, uv.shape)
            for corner_id, (u, v) in zip(np.nonzero(mask)[0], uv):
                observations.append(
                    Observation(cam.camera_id, k, int(corner_id), float(u), float(v))
                )
    write_observations(observations, out / "observations.csv")

    # --- frame indices and blur-graded images -------------------------------
    radius = cfg.blur_neighborhood
    for ci, cam in enumerate(cfg.cameras):
        cam_dir = out / "frames" / cam.camera_id
        cam_dir.mkdir(parents=True, exist_ok=True)
        stamps = kept_per_cam[ci]
        records = [
            (f"frames/{cam.camera_id}/f{i:06d}.pgm", int(s)) for i, s in enumerate(stamps)
        ]
        with open(out / "index" / f"{cam.camera_id}.csv", "w", encoding="utf-8") as fh:
            for rel, stamp in records:
                fh.write(f"{rel},{stamp}\n")
        for k in range(cfg.n_events):
            sharp = sharp_frames[k][cam.camera_id]
            texture = make_texture(rng)
            for idx in range(max(0, sharp - radius), min(len(records), sharp + radius + 1)):
                sigma = 0.9 * abs(idx - sharp)
                img = np.clip(np.round(gaussian_blur(texture, sigma)), 0, 255).astype(np.uint8)
                buf = ImageBuffer(img.shape[1], img.shape[0], 1, img[:, :, None])
                save_pnm(buf, out / f"frames/{cam.camera_id}/f{idx:06d}.pgm")

    # --- audio ---------------------------------------------------------------
    n_samples = int(duration_s * rate)
    audio = rng.normal(0.0, 0.003, n_samples)
    anchor_times = [2.0, duration_s / 2.0, duration_s - 2.0]
    for t in anchor_times:
        _add_at(audio, _clap_burst(rate), int(round(t * rate)))
    template = make_chirp_template(rate)
    for mid in midpoints:
        if cfg.spotter_mode:
            _add_at(audio, template, int(round(mid * rate)) - template.size // 2)
        else:
            marker = _tone_marker(rate)
            _add_at(audio, marker, int(round(mid * rate)) - marker.size // 2)
    np.clip(audio, -1.0, 1.0, out=audio)
    save_wav(audio, rate, out / "audio.wav")
    if cfg.spotter_mode:
        # the template is an excerpt of comparable audio: same noise floor
        (out / "templates").mkdir(exist_ok=True)
        noisy_template = template + rng.normal(0.0, 0.003, template.size)
        save_wav(noisy_template, rate, out / "templates" / "template0.wav")

    # --- transcript ------------------------------------------------------------
    words = []
    if not cfg.spotter_mode:
        for k, t_k in enumerate(event_times):
            j1, j2 = jitters[k]
            half = durations[k] / 2.0
            words.append(
                {
                    "word": _TRIGGER_SPELLINGS[int(rng.integers(len(_TRIGGER_SPELLINGS)))],
                    "start": round(t_k - half + j1, 6),
                    "end": round(t_k + half + j2, 6),
                    "score": round(float(rng.uniform(0.85, 0.99)), 3),
                }
            )
            if k + 1 < cfg.n_events:
                t_fill = t_k + 0.45 * cfg.event_spacing_s
                words.append(
                    {
                        "word": _FILLER_WORDS[int(rng.integers(len(_FILLER_WORDS)))],
                        "start": round(t_fill, 6),
                        "end": round(t_fill + 0.3, 6),
                        "score": round(float(rng.uniform(0.85, 0.99)), 3),
                    }
                )
    words.sort(key=lambda w: w["start"])
    segments = [{"words": words[i : i + 8]} for i in range(0, len(words), 8)]
    with open(out / "transcript.json", "w", encoding="utf-8") as fh:
        json.dump({"segments": segments}, fh, indent=1, sort_keys=True)
        fh.write("\n")

    # midpoint of a transcript word must reproduce event_time + mean jitter:
    # transcript times are rounded to 1 us, so recompute the midpoints the
    # pipeline will see (spotter sessions keep the exact embed times)
    if not cfg.spotter_mode:
        trig = [w for w in words if w["word"].lower().strip(" .!") == cfg.trigger_word]
        midpoints = [(w["start"] + w["end"]) / 2.0 for w in trig]

    # --- manifest and anchors ---------------------------------------------------
    anchors = []
    for t in anchor_times:
        epoch = _epoch_of(cfg, t)
        if cfg.anchor_jitter_s > 0:
            epoch += round(rng.normal(0.0, cfg.anchor_jitter_s) * 1e9)
        anchors.append({"audio_time_s": t, "camera_epoch_ns": epoch})
    manifest_doc = {
        "cameras": [
            {"id": cam.camera_id, "index": f"index/{cam.camera_id}.csv"}
            for cam in cfg.cameras
        ],
        "audio": "audio.wav",
        "transcript": "transcript.json",
        "trigger_word": cfg.trigger_word,
        "clap_anchors": anchors,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest_doc, fh, indent=1, sort_keys=True)
        fh.write("\n")

    meta = {
        "target": {
            "rows": cfg.board_rows,
            "cols": cfg.board_cols,
            "spacing_m": cfg.board_spacing_m,
        },
        "image_sizes": {
            cam.camera_id: list(size) for cam, size in zip(cfg.cameras, sizes)
        },
        "models": {cam.camera_id: cam.model for cam in cfg.cameras},
    }
    with open(out / CALIB_META_NAME, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")

    ground_truth = {
        "seed": cfg.seed,
        "clock": {"scale_a": cfg.clock_scale, "offset_b_s": cfg.clock_offset_s},
        "cameras": {
            cam.camera_id: {
                **intrinsics_to_dict(K),
                "extrinsic": pose_to_dict(T),
                "image_size": list(size),
            }
            for cam, K, T, size in zip(cfg.cameras, intrinsics, extrinsics, sizes)
        },
        "board_poses": {str(k): pose_to_dict(p) for k, p in enumerate(board_poses)},
        "events": [
            {
                "view_id": k,
                "true_time_s": event_times[k],
                "word_midpoint_s": midpoints[k],
                "true_epoch_ns": _epoch_of(cfg, event_times[k]),
                "midpoint_epoch_ns": _epoch_of(cfg, midpoints[k]),
                "sharp_frames": sharp_frames[k],
            }
            for k in range(cfg.n_events)
        ],
        "target": meta["target"],
        "pixel_noise_px": cfg.pixel_noise_px,
    }
    with open(out / GROUND_TRUTH_NAME, "w", encoding="utf-8") as fh:
        json.dump(ground_truth, fh, indent=1, sort_keys=True)
        fh.write("\n")

    return load_manifest(out / "manifest.json"), ground_truth


# ---------------------------------------------------------------------------
# recovery verification
# ---------------------------------------------------------------------------

@dataclass
class RecoveryReport:
    focal_rel_err: dict[str, float]
    center_rel_err: dict[str, float]
    dist_abs_err: dict[str, float]  # distortion / xi / alpha, absolute
    rot_err_deg: dict[str, float]
    trans_err_m: dict[str, float]
    trans_rel_err: dict[str, float]  # relative to the true baseline length
    trigger_err_ms: list[float]
    sharp_frame_hits: int
    sharp_frame_total: int

    def max_focal_rel_err(self) -> float:
        return max(self.focal_rel_err.values())


def load_ground_truth(session_dir) -> dict:
    path = Path(session_dir) / GROUND_TRUTH_NAME
    if not path.is_file():
        raise MissingGroundTruth(str(path))
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _intrinsic_errors(est: Intrinsics, true: Intrinsics):
    focal = max(abs(est.fx - true.fx) / true.fx, abs(est.fy - true.fy) / true.fy)
    center = max(abs(est.cx - true.cx) / abs(true.cx), abs(est.cy - true.cy) / abs(true.cy))
    if isinstance(true, PinholeIntrinsics):
        dist = max(
            abs(est.k1 - true.k1), abs(est.k2 - true.k2), abs(est.k3 - true.k3),
            abs(est.p1 - true.p1), abs(est.p2 - true.p2),
        )
    else:
        dist = max(abs(est.xi - true.xi), abs(est.alpha - true.alpha))
    return focal, center, dist


def verify_recovery(session_dir, result, sync_report: dict | None = None) -> RecoveryReport:
    """Compare a calibration result (and optional sync report) against the
    session's ground-truth sidecar."""
    gt = load_ground_truth(session_dir)
    focal, center, dist = {}, {}, {}
    rot, trans, trans_rel = {}, {}, {}
    for cam_id in result.camera_ids:
        true_K = intrinsics_from_dict(gt["cameras"][cam_id])
        f, c, d = _intrinsic_errors(result.intrinsics[cam_id], true_K)
        focal[cam_id], center[cam_id], dist[cam_id] = f, c, d
        true_T = pose_from_dict(gt["cameras"][cam_id]["extrinsic"])
        est_T = result.extrinsics.get(cam_id)
        if est_T is None:
            continue
        rot[cam_id] = rotation_angle_deg(est_T, true_T)
        err = np.linalg.norm(est_T.t - true_T.t)
        trans[cam_id] = float(err)
        baseline = np.linalg.norm(true_T.t)
        if baseline > 1e-9:
            trans_rel[cam_id] = float(err / baseline)

    trigger_err_ms: list[float] = []
    hits = 0
    total = 0
    if sync_report is not None:
        events_gt = {e["view_id"]: e for e in gt["events"]}
        for ev in sync_report.get("triggers", []):
            gt_ev = events_gt.get(ev["view_id"])
            if gt_ev is None:
                continue
            trigger_err_ms.append(abs(ev["camera_epoch_ns"] - gt_ev["true_epoch_ns"]) / 1e6)
            for cam_id, res in ev["cameras"].items():
                if res.get("status") != "resolved":
                    continue
                total += 1
                if res.get("frame_index") == gt_ev["sharp_frames"].get(cam_id):
                    hits += 1

    return RecoveryReport(
        focal_rel_err=focal,
        center_rel_err=center,
        dist_abs_err=dist,
        rot_err_deg=rot,
        trans_err_m=trans,
        trans_rel_err=trans_rel,
        trigger_err_ms=trigger_err_ms,
        sharp_frame_hits=hits,
        sharp_frame_total=total,
    )
