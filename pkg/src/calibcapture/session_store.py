"""On-disk calibration-session layout: manifest, frame indices, images, audio.

A session directory holds one JSON manifest, one CSV frame index per camera
(`relative_path,stamp_ns`), binary PGM/PPM frames, a 16-bit PCM WAV and a
word-timestamped transcript. All loaders are pure functions of their input
files and return immutable values.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvariantViolation,
    MalformedManifest,
    MalformedRiff,
    MalformedRow,
    MissingFile,
    NonMonotonicStamp,
    TruncatedData,
    UnsupportedEncoding,
    UnsupportedFormat,
)

# Nanoseconds since the Unix epoch, int64 semantics (covers +-292 years).
Timestamp = int

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class FrameRecord:
    path: str  # relative to the session root
    stamp: Timestamp


@dataclass
class CameraStreamDescriptor:
    camera_id: str
    frames: list[FrameRecord]
    nominal_period_ns: float = field(init=False)

    def __post_init__(self):
        if not self.camera_id:
            raise InvariantViolation("camera_id must be nonempty")
        if len(self.frames) < 2:
            raise InvariantViolation(
                f"camera {self.camera_id!r}: at least 2 frames required to derive a frame period"
            )
        diffs = np.diff(np.array([f.stamp for f in self.frames], dtype=np.int64))
        period = float(np.median(diffs))
        if period <= 0:
            raise InvariantViolation(f"camera {self.camera_id!r}: nonpositive frame period")
        self.nominal_period_ns = period

    def stamps(self) -> np.ndarray:
        return np.array([f.stamp for f in self.frames], dtype=np.int64)


@dataclass
class SessionManifest:
    root: Path
    cameras: list[CameraStreamDescriptor]
    audio_path: Path
    transcript_path: Path
    trigger_word: str
    clap_anchors: list[tuple[float, Timestamp]]  # (audio_time_s, camera_epoch_ns)

    def camera(self, camera_id: str) -> CameraStreamDescriptor:
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)


@dataclass
class ImageBuffer:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # (height, width, channels) uint8, row-major

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvariantViolation("image dimensions must be >= 1")
        if self.channels not in (1, 3):
            raise InvariantViolation("channels must be 1 or 3")
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise InvariantViolation(
                f"pixel array shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x{self.channels}"
            )

    @property
    def data(self) -> np.ndarray:
        return self.pixels.reshape(-1)


@dataclass
class AudioBuffer:
    sample_rate_hz: int
    samples: np.ndarray  # mono float64 in [-1, 1]

    def __post_init__(self):
        if not 8000 <= self.sample_rate_hz <= 192000:
            raise InvariantViolation(
                f"sample rate {self.sample_rate_hz} outside [8000, 192000] Hz"
            )
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvariantViolation("audio must be mono (1-D)")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InvariantViolation("audio contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


# ---------------------------------------------------------------------------
# frame index CSV
# ---------------------------------------------------------------------------

def load_frame_index(path) -> list[FrameRecord]:
    """Parse a `relative_path,stamp_ns` CSV; stamps must strictly increase."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    records: list[FrameRecord] = []
    prev = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.rsplit(",", 1)
            if len(parts) != 2 or not parts[0]:
                raise MalformedRow(lineno, f"expected 'path,stamp_ns', got {line!r}")
            try:
                stamp = int(parts[1])
            except ValueError:
                raise MalformedRow(lineno, f"bad timestamp {parts[1]!r}") from None
            if not _INT64_MIN <= stamp <= _INT64_MAX:
                raise MalformedRow(lineno, f"timestamp {stamp} outside int64 range")
            if prev is not None and stamp <= prev:
                raise NonMonotonicStamp(
                    lineno, f"stamp {stamp} does not increase over {prev}"
                )
            records.append(FrameRecord(parts[0], stamp))
            prev = stamp
    return records


def save_frame_index(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.path},{rec.stamp}\n")


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _require(obj, key, kind, where):
    if key not in obj:
        raise MalformedManifest(f"{where}.{key}: missing")
    val = obj[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise MalformedManifest(f"{where}.{key}: expected number, got {type(val).__name__}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise MalformedManifest(f"{where}.{key}: expected integer, got {type(val).__name__}")
        return val
    if not isinstance(val, kind):
        raise MalformedManifest(
            f"{where}.{key}: expected {kind.__name__}, got {type(val).__name__}"
        )
    return val


def _check_inside_root(root: Path, rel: str, what: str) -> None:
    p = Path(rel)
    if p.is_absolute():
        raise InvariantViolation(f"{what}: absolute path {rel!r} not allowed")
    resolved = (root / p).resolve()
    if not resolved.is_relative_to(root.resolve()):
        raise InvariantViolation(f"{what}: path {rel!r} escapes the session directory")


def load_manifest(path) -> SessionManifest:
    """Load and fully validate a session manifest plus its frame indices."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    root = path.parent
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedManifest("top level must be a JSON object")

    cam_entries = _require(doc, "cameras", list, "manifest")
    if not cam_entries:
        raise MalformedManifest("manifest.cameras: must list at least one camera")
    audio_rel = _require(doc, "audio", str, "manifest")
    transcript_rel = _require(doc, "transcript", str, "manifest")
    trigger_word = _require(doc, "trigger_word", str, "manifest")
    if not any(ch.isalnum() for ch in trigger_word):
        raise MalformedManifest("manifest.trigger_word: empty after normalization")
    anchor_entries = _require(doc, "clap_anchors", list, "manifest")
    if not anchor_entries:
        raise MalformedManifest("manifest.clap_anchors: at least one anchor required")

    anchors: list[tuple[float, Timestamp]] = []
    for i, entry in enumerate(anchor_entries):
        where = f"manifest.clap_anchors[{i}]"
        if not isinstance(entry, dict):
            raise MalformedManifest(f"{where}: expected object")
        t_audio = _require(entry, "audio_time_s", float, where)
        epoch = _require(entry, "camera_epoch_ns", int, where)
        if not np.isfinite(t_audio) or t_audio < 0:
            raise MalformedManifest(f"{where}.audio_time_s: must be finite and >= 0")
        anchors.append((t_audio, epoch))

    cameras: list[CameraStreamDescriptor] = []
    seen_ids = set()
    for i, entry in enumerate(cam_entries):
        where = f"manifest.cameras[{i}]"
        if not isinstance(entry, dict):
            raise MalformedManifest(f"{where}: expected object")
        cam_id = _require(entry, "id", str, where)
        index_rel = _require(entry, "index", str, where)
        if cam_id in seen_ids:
            raise InvariantViolation(f"{where}.id: duplicate camera id {cam_id!r}")
        seen_ids.add(cam_id)
        _check_inside_root(root, index_rel, f"{where}.index")
        index_path = root / index_rel
        if not index_path.is_file():
            raise MissingFile(str(index_path))
        try:
            frames = load_frame_index(index_path)
        except NonMonotonicStamp as exc:
            raise NonMonotonicStamp(
                exc.line_number, f"camera {cam_id!r} index {index_rel!r}: {exc}"
            ) from None
        for rec in frames:
            _check_inside_root(root, rec.path, f"camera {cam_id!r} frame")
        cameras.append(CameraStreamDescriptor(cam_id, frames))

    for rel, what in ((audio_rel, "manifest.audio"), (transcript_rel, "manifest.transcript")):
        _check_inside_root(root, rel, what)
        if not (root / rel).is_file():
            raise MissingFile(str(root / rel))

    return SessionManifest(
        root=root,
        cameras=cameras,
        audio_path=root / audio_rel,
        transcript_path=root / transcript_rel,
        trigger_word=trigger_word,
        clap_anchors=anchors,
    )


# ---------------------------------------------------------------------------
# binary PNM (P5 grayscale / P6 RGB, maxval <= 255)
# ---------------------------------------------------------------------------

def _next_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in b" \t\r\n\x0b\x0c":
            pos += 1
        elif c == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in b" \t\r\n\x0b\x0c":
        pos += 1
    if start == pos:
        raise TruncatedData("unexpected end of PNM header")
    return buf[start:pos], pos


def load_pnm(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    buf = path.read_bytes()
    if len(buf) < 2:
        raise TruncatedData(f"{path}: too short for a PNM header")
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    elif magic in (b"P1", b"P2", b"P3", b"P4", b"P7"):
        raise UnsupportedFormat(f"{path}: {magic.decode()} not supported (binary P5/P6 only)")
    else:
        raise UnsupportedFormat(f"{path}: not a PNM file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise UnsupportedFormat(f"{path}: bad header token {tok!r}") from None
    width, height, maxval = fields
    if maxval > 255:
        raise UnsupportedFormat(f"{path}: maxval {maxval} (16-bit) not supported")
    if maxval < 1 or width < 1 or height < 1:
        raise UnsupportedFormat(f"{path}: invalid header values {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte separates header from raster
    need = width * height * channels
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise TruncatedData(f"{path}: expected {need} raster bytes, got {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(width, height, channels, pixels.copy())


def save_pnm(img: ImageBuffer, path) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


# ---------------------------------------------------------------------------
# RIFF/WAVE, PCM 16-bit
# ---------------------------------------------------------------------------

def load_wav(path) -> AudioBuffer:
    """Load a PCM-16 WAV; stereo is averaged to mono; samples scaled by 1/32768."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise MalformedRiff(f"{path}: missing RIFF/WAVE header")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(buf):
        chunk_id = buf[pos : pos + 4]
        (size,) = struct.unpack_from("<I", buf, pos + 4)
        body = buf[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedRiff(f"{path}: chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise MalformedRiff(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise MalformedRiff(f"{path}: fmt chunk too short")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise UnsupportedEncoding(
            f"{path}: format code {audio_format} (only PCM integer supported)"
        )
    if bits != 16:
        raise UnsupportedEncoding(f"{path}: {bits}-bit samples (only 16-bit supported)")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {channels} channels (mono or stereo only)")
    if len(data) % (2 * channels) != 0:
        raise MalformedRiff(f"{path}: data size not a whole number of frames")

    raw = np.frombuffer(data, dtype="<i2").astype(np.float64)
    if channels == 2:
        raw = raw.reshape(-1, 2)
        mono = (raw[:, 0] + raw[:, 1]) / 2.0  # exact integer average
    else:
        mono = raw
    return AudioBuffer(sample_rate_hz=sample_rate, samples=mono / 32768.0)


def save_wav(samples, sample_rate_hz: int, path) -> None:
    """Write mono float samples in [-1, 1] as PCM-16 WAV."""
    x = np.asarray(samples, dtype=np.float64)
    ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    header = (
        b"RIFF"
        + struct.pack("<I", 36 + len(payload))
        + b"WAVE"
        + b"fmt "
        + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate_hz, sample_rate_hz * 2, 2, 16)
        + b"data"
        + struct.pack("<I", len(payload))
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
