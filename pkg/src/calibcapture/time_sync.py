"""Mapping audio-timeline instants into camera epoch clocks.

Clap anchors give (audio_time_s, camera_epoch_ns) pairs; an affine clock map
fitted to them converts trigger times into epoch nanoseconds, and each
camera's frame index is then searched for the nearest synchronized frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .audio_dsp import TriggerHit
from .errors import DegenerateAnchors, DriftTooLarge
from .session_store import CameraStreamDescriptor, FrameRecord, SessionManifest, Timestamp

MAX_DRIFT = 0.01  # |scale - 1| beyond this means the clocks were never disciplined


@dataclass(frozen=True)
class ClockMap:
    scale_a: float  # camera seconds per audio second
    offset_b_s: float  # camera epoch (seconds) at audio t = 0
    residual_rms_s: float = 0.0
    n_anchors: int = 1


def fit_clock_map(anchors, fix_scale: bool = False) -> ClockMap:
    """Fit camera_epoch = a * audio_time + b.

    One anchor pins the offset with a = 1; two or more are fit by least
    squares (or, with fix_scale, a = 1 and b = mean residual).
    """
    if not anchors:
        raise DegenerateAnchors("no anchors")
    t = np.array([a[0] for a in anchors], dtype=np.float64)
    epoch_s = np.array([a[1] for a in anchors], dtype=np.float64) / 1e9

    if len(anchors) == 1:
        a, b = 1.0, epoch_s[0] - t[0]
        rms = 0.0
    elif fix_scale:
        a = 1.0
        b = float(np.mean(epoch_s - t))
        rms = float(np.sqrt(np.mean((epoch_s - (t + b)) ** 2)))
    else:
        if np.unique(t).size < t.size:
            raise DegenerateAnchors("two anchors share the same audio time")
        # centered least squares keeps the normal equations well conditioned
        # even though epochs are ~1e9 seconds
        t0 = t.mean()
        e0 = epoch_s.mean()
        dt = t - t0
        de = epoch_s - e0
        a = float(np.dot(dt, de) / np.dot(dt, dt))
        b = float(e0 - a * t0)
        rms = float(np.sqrt(np.mean((epoch_s - (a * t + b)) ** 2)))

    if abs(a - 1.0) > MAX_DRIFT:
        raise DriftTooLarge(f"fitted scale {a} deviates from 1 by more than {MAX_DRIFT}")
    return ClockMap(scale_a=a, offset_b_s=b, residual_rms_s=rms, n_anchors=len(anchors))


def map_time(clock: ClockMap, audio_time_s: float) -> Timestamp:
    return round((clock.scale_a * audio_time_s + clock.offset_b_s) * 1e9)


def map_trigger(clock: ClockMap, hit: TriggerHit) -> Timestamp:
    return map_time(clock, hit.audio_time_s)


# ---------------------------------------------------------------------------
# frame resolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resolution:
    frame: FrameRecord
    frame_index: int
    delta_ms: float


@dataclass(frozen=True)
class Rejection:
    reason: str
    nearest_delta_ms: float | None = None


@dataclass
class TriggerEvent:
    view_id: int
    audio_time_s: float
    camera_epoch: Timestamp
    per_camera: dict[str, Resolution | Rejection]
    fully_synchronized: bool
    span_ms: float | None  # max-min over resolved stamps, None if nothing resolved
    source: str = "transcript"


def nearest_frame(stamps: np.ndarray, epoch: Timestamp) -> int:
    """Index of the stamp nearest to epoch; equidistant ties take the earlier."""
    i = int(np.searchsorted(stamps, epoch))
    if i == 0:
        return 0
    if i == len(stamps):
        return len(stamps) - 1
    before = epoch - int(stamps[i - 1])
    after = int(stamps[i]) - epoch
    return i - 1 if before <= after else i


def resolve_frames(
    session: SessionManifest,
    epoch: Timestamp,
    tolerance_factor: float = 1.5,
    sync_window_ms: float = 50.0,
    view_id: int = 0,
    audio_time_s: float = 0.0,
) -> TriggerEvent:
    """Resolve the nearest frame per camera for one trigger epoch.

    A camera's frame is accepted iff |stamp - epoch| <= tolerance_factor times
    that camera's nominal period; the event is fully synchronized iff every
    camera resolved and the accepted stamps span at most sync_window_ms.
    """
    per_camera: dict[str, Resolution | Rejection] = {}
    resolved_stamps = []
    for cam in session.cameras:
        stamps = cam.stamps()
        idx = nearest_frame(stamps, epoch)
        delta_ns = abs(int(stamps[idx]) - epoch)
        delta_ms = delta_ns / 1e6
        tol_ns = tolerance_factor * cam.nominal_period_ns
        if delta_ns <= tol_ns:
            per_camera[cam.camera_id] = Resolution(cam.frames[idx], idx, delta_ms)
            resolved_stamps.append(int(stamps[idx]))
        else:
            per_camera[cam.camera_id] = Rejection("ToleranceExceeded", delta_ms)

    span_ms = None
    if resolved_stamps:
        span_ms = (max(resolved_stamps) - min(resolved_stamps)) / 1e6
    fully = len(resolved_stamps) == len(session.cameras) and (
        span_ms is not None and span_ms <= sync_window_ms
    )
    return TriggerEvent(
        view_id=view_id,
        audio_time_s=audio_time_s,
        camera_epoch=epoch,
        per_camera=per_camera,
        fully_synchronized=fully,
        span_ms=span_ms,
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class SyncReport:
    n_triggers: int
    n_fully_synchronized: int
    n_partial: int
    n_rejected: int
    per_camera_rejections: dict[str, int]
    events: list[TriggerEvent] = field(default_factory=list)


def build_sync_report(events: list[TriggerEvent]) -> SyncReport:
    n_full = sum(1 for e in events if e.fully_synchronized)
    n_rejected = sum(
        1
        for e in events
        if not any(isinstance(r, Resolution) for r in e.per_camera.values())
    )
    n_partial = len(events) - n_full - n_rejected
    rejections: dict[str, int] = {}
    for e in events:
        for cam_id, res in e.per_camera.items():
            if isinstance(res, Rejection):
                rejections[cam_id] = rejections.get(cam_id, 0) + 1
    return SyncReport(
        n_triggers=len(events),
        n_fully_synchronized=n_full,
        n_partial=n_partial,
        n_rejected=n_rejected,
        per_camera_rejections=rejections,
        events=events,
    )
