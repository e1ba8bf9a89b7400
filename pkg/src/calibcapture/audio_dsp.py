"""Trigger-word and clap extraction from the operator audio track.

The primary trigger path consumes a word-timestamped transcript (WhisperX
compatible JSON); the fallback path is a template keyword spotter built on
MFCC features and open-end DTW. Clap detection supports anchoring the audio
timeline to the camera clocks.
"""

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from . import kernels
from .errors import (
    AudioTooShort,
    InvalidConfig,
    InvariantViolation,
    MalformedTranscript,
    MissingFile,
    TemplateTooShort,
)
from .session_store import AudioBuffer


def normalize_word(word: str) -> str:
    """Lowercase and strip everything non-alphanumeric ("Capture!" -> "capture")."""
    return "".join(ch for ch in word.lower() if ch.isalnum())


class TriggerSource(enum.Enum):
    TRANSCRIPT = "transcript"
    SPOTTER = "spotter"


@dataclass(frozen=True)
class WordSegment:
    text: str
    start_s: float
    end_s: float
    confidence: float | None = None


@dataclass(frozen=True)
class TriggerHit:
    audio_time_s: float
    source: TriggerSource
    matched_text: str
    score: float

    def __post_init__(self):
        if self.audio_time_s < 0:
            raise InvariantViolation("trigger time must be >= 0")


@dataclass(frozen=True)
class ClapEvent:
    audio_time_s: float
    peak_amplitude: float
    envelope_ratio: float


@dataclass
class MfccSequence:
    hop_s: float
    frames: np.ndarray  # (n_frames, n_coeffs)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.hop_s <= 0:
            raise InvariantViolation("hop must be positive")
        if self.frames.size and not np.all(np.isfinite(self.frames)):
            raise InvariantViolation("MFCC frames contain non-finite values")

    def __len__(self):
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# transcript parsing
# ---------------------------------------------------------------------------

@dataclass
class TranscriptParse:
    words: list[WordSegment]
    dropped: int


def _word_from_entry(entry, where):
    if not isinstance(entry, dict):
        raise MalformedTranscript(f"{where}: expected object")
    if "word" not in entry:
        raise MalformedTranscript(f"{where}.word: missing")
    text = entry["word"]
    if not isinstance(text, str):
        raise MalformedTranscript(f"{where}.word: expected string")
    times = []
    for key in ("start", "end"):
        if key not in entry:
            return None  # word lacks a timestamp: dropped, not an error
        val = entry[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise MalformedTranscript(f"{where}.{key}: expected number")
        times.append(float(val))
    start, end = times
    if start < 0 or end < start:
        raise MalformedTranscript(f"{where}: bad interval [{start}, {end}]")
    if not text.strip():
        return None
    score = entry.get("score")
    if score is not None and (not isinstance(score, (int, float)) or isinstance(score, bool)):
        raise MalformedTranscript(f"{where}.score: expected number")
    return WordSegment(text, start, end, None if score is None else float(score))


def parse_transcript_detailed(path) -> TranscriptParse:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedTranscript(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedTranscript("top level must be an object")
    segments = doc.get("segments")
    if segments is None:
        raise MalformedTranscript("segments: missing")
    if not isinstance(segments, list):
        raise MalformedTranscript("segments: expected array")
    words: list[WordSegment] = []
    dropped = 0
    for si, seg in enumerate(segments):
        if not isinstance(seg, dict):
            raise MalformedTranscript(f"segments[{si}]: expected object")
        entries = seg.get("words", [])
        if not isinstance(entries, list):
            raise MalformedTranscript(f"segments[{si}].words: expected array")
        for wi, entry in enumerate(entries):
            word = _word_from_entry(entry, f"segments[{si}].words[{wi}]")
            if word is None:
                dropped += 1
            else:
                words.append(word)
    words.sort(key=lambda w: w.start_s)
    return TranscriptParse(words, dropped)


def parse_transcript(path) -> list[WordSegment]:
    """Words with timestamps, ordered by start time; un-timestamped words dropped."""
    return parse_transcript_detailed(path).words


# ---------------------------------------------------------------------------
# trigger-word extraction
# ---------------------------------------------------------------------------

def find_triggers(
    words: list[WordSegment],
    trigger_word: str,
    min_separation_s: float = 1.0,
) -> list[TriggerHit]:
    """One hit per transcript word matching the trigger, at the mean of its
    start and end timestamps. Hits closer than min_separation_s to the
    previously kept hit are merged, keeping the earlier one."""
    target = normalize_word(trigger_word)
    if not target:
        raise InvalidConfig("trigger word is empty after normalization")
    raw = [
        TriggerHit(
            audio_time_s=(w.start_s + w.end_s) / 2.0,
            source=TriggerSource.TRANSCRIPT,
            matched_text=w.text,
            score=1.0 if w.confidence is None else w.confidence,
        )
        for w in words
        if normalize_word(w.text) == target
    ]
    raw.sort(key=lambda h: h.audio_time_s)
    hits: list[TriggerHit] = []
    for hit in raw:
        if hits and hit.audio_time_s - hits[-1].audio_time_s < min_separation_s:
            continue
        hits.append(hit)
    return hits


# ---------------------------------------------------------------------------
# clap detection
# ---------------------------------------------------------------------------

@dataclass
class ClapConfig:
    window_s: float = 0.010
    hop_s: float = 0.005
    ratio_k: float = 8.0
    abs_floor: float = 0.05  # amplitude; squared internally for the energy test
    min_separation_s: float = 0.5
    local_max_radius_s: float = 0.100


def detect_claps(audio: AudioBuffer, config: ClapConfig = ClapConfig()) -> list[ClapEvent]:
    """Energy-envelope clap picker.

    Frames whose short-time energy exceeds ratio_k times the median energy,
    whose peak |amplitude| clears abs_floor, and which are local maxima
    within +-local_max_radius_s become events; event time is refined to the
    sample of maximum |amplitude| inside the winning frame.

    abs_floor gates the peak amplitude (not the windowed energy, which a
    short burst dilutes), keeping detections covariant under gain changes.
    """
    x = audio.samples
    rate = audio.sample_rate_hz
    win = max(1, round(config.window_s * rate))
    hop = max(1, round(config.hop_s * rate))
    if x.size < win:
        return []
    n_frames = 1 + (x.size - win) // hop
    csq = np.concatenate(([0.0], np.cumsum(x * x)))
    starts = np.arange(n_frames) * hop
    energy = (csq[starts + win] - csq[starts]) / win

    med = float(np.median(energy))
    candidates = np.nonzero(energy > config.ratio_k * med)[0]
    if candidates.size == 0:
        return []

    rad = max(1, round(config.local_max_radius_s / (hop / rate)))
    events: list[ClapEvent] = []
    for i in candidates:
        lo = max(0, i - rad)
        hi = min(n_frames, i + rad + 1)
        if energy[i] < energy[lo:hi].max():
            continue
        s0 = int(starts[i])
        seg = np.abs(x[s0 : s0 + win])
        peak = int(np.argmax(seg))
        if seg[peak] < config.abs_floor:
            continue
        t = (s0 + peak) / rate
        ratio = energy[i] / med if med > 0 else math.inf
        events.append(ClapEvent(t, float(seg[peak]), float(ratio)))

    events.sort(key=lambda e: e.audio_time_s)
    merged: list[ClapEvent] = []
    for ev in events:
        if merged and ev.audio_time_s - merged[-1].audio_time_s < config.min_separation_s:
            continue
        merged.append(ev)
    return merged


# ---------------------------------------------------------------------------
# MFCC front-end for the fallback spotter
# ---------------------------------------------------------------------------

def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, rate: int) -> np.ndarray:
    """Triangular mel filters from 0 Hz to Nyquist over rfft bins (HTK style,
    unnormalized)."""
    nyq = rate / 2.0
    mel_pts = np.linspace(0.0, _mel(nyq), n_mels + 2)
    hz_pts = _mel_inv(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * (rate / n_fft)
    bank = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        f_lo, f_mid, f_hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - f_lo) / max(f_mid - f_lo, 1e-12)
        falling = (f_hi - bin_freqs) / max(f_hi - f_mid, 1e-12)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def mfcc(
    audio: AudioBuffer,
    window_s: float = 0.025,
    hop_s: float = 0.010,
    n_mels: int = 26,
    n_coeffs: int = 13,
) -> MfccSequence:
    """Hann window -> power spectrum -> mel filterbank -> log (floor 1e-10)
    -> orthonormal DCT-II, keeping coefficients 0..n_coeffs-1."""
    x = audio.samples
    rate = audio.sample_rate_hz
    win = round(window_s * rate)
    hop = round(hop_s * rate)
    if win < 2 or hop < 1:
        raise InvalidConfig("window/hop too small for the sample rate")
    if x.size < win:
        raise AudioTooShort(f"need at least {win} samples, got {x.size}")
    n_frames = 1 + (x.size - win) // hop
    idx = np.arange(win)[None, :] + (np.arange(n_frames) * hop)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    bank = mel_filterbank(n_mels, win, rate)
    mel_energy = power @ bank.T
    log_mel = np.log(np.maximum(mel_energy, 1e-10))
    coeffs = scipy.fft.dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return MfccSequence(hop_s=hop / rate, frames=coeffs)


# ---------------------------------------------------------------------------
# DTW and keyword spotting
# ---------------------------------------------------------------------------

def _frame_distances(a: np.ndarray, b: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Pairwise Euclidean distances, (len(a), len(b)).

    Computed from explicit differences (chunked over b to bound memory) so
    that identical frames give exactly zero; the Gram-matrix shortcut loses
    that to cancellation."""
    out = np.empty((a.shape[0], b.shape[0]))
    for j0 in range(0, b.shape[0], chunk):
        block = b[j0 : j0 + chunk]
        diff = a[:, None, :] - block[None, :, :]
        out[:, j0 : j0 + chunk] = np.sqrt((diff * diff).sum(axis=2))
    return out


def dtw_distance(a: MfccSequence, b: MfccSequence) -> float:
    """Path-length-normalized DTW distance between two coefficient sequences."""
    if len(a) == 0 or len(b) == 0:
        raise InvalidConfig("cannot align empty sequences")
    dist = _frame_distances(a.frames, b.frames)
    total, steps = kernels.dtw_full(dist)
    return float(total) / int(steps)


@dataclass
class SpotterConfig:
    threshold: float = 0.45
    min_separation_s: float = 1.0
    length_tolerance: float = 0.3  # window length = template length * (1 +- this)
    min_template_frames: int = 5


@dataclass(frozen=True)
class _Candidate:
    time_s: float
    cost: float
    template_index: int


def spot_keyword(
    sequence: MfccSequence,
    templates: list[MfccSequence],
    config: SpotterConfig = SpotterConfig(),
) -> list[TriggerHit]:
    """Slide each template over the sequence (stride one frame) with open-end
    DTW; windows beating the threshold become hits at the matched window's
    temporal midpoint, then non-maximum suppression keeps the best hit within
    any min_separation_s span.

    Coefficients are z-normalized with the template's per-coefficient stats
    before matching, and the frame distance is the per-coefficient RMS
    (Euclidean over z-scores divided by sqrt(n_coeffs)), so the threshold
    reads as "mean deviation per coefficient" and stays comparable across
    templates and coefficient counts.
    """
    if not templates:
        raise InvalidConfig("at least one template required")
    hop = sequence.hop_s
    candidates: list[_Candidate] = []
    for k, tmpl in enumerate(templates):
        if len(tmpl) < config.min_template_frames:
            raise TemplateTooShort(
                f"template {k}: {len(tmpl)} frames < {config.min_template_frames}"
            )
        if not math.isclose(tmpl.hop_s, hop, rel_tol=1e-6):
            raise InvalidConfig(f"template {k}: hop {tmpl.hop_s} != sequence hop {hop}")
        n_tmpl = len(tmpl)
        n_seq = len(sequence)
        min_len = max(2, math.floor(n_tmpl * (1.0 - config.length_tolerance)))
        max_len = max(min_len, math.ceil(n_tmpl * (1.0 + config.length_tolerance)))
        if n_seq < min_len:
            continue
        mu = tmpl.frames.mean(axis=0)
        sd = np.maximum(tmpl.frames.std(axis=0), 1e-8)
        z_tmpl = (tmpl.frames - mu) / sd
        z_seq = (sequence.frames - mu) / sd
        dist = _frame_distances(z_tmpl, z_seq) / math.sqrt(tmpl.frames.shape[1])
        dist_pad = np.concatenate(
            [dist, np.full((n_tmpl, max_len), np.inf)], axis=1
        )
        costs, lens = kernels.spot_costs(dist_pad, n_seq, min_len, max_len)
        for s in np.nonzero(costs < config.threshold)[0]:
            t = (s + lens[s] / 2.0) * hop
            candidates.append(_Candidate(t, float(costs[s]), k))

    candidates.sort(key=lambda c: (c.cost, c.time_s))
    kept: list[_Candidate] = []
    for cand in candidates:
        if any(abs(cand.time_s - k.time_s) < config.min_separation_s for k in kept):
            continue
        kept.append(cand)
    kept.sort(key=lambda c: c.time_s)
    return [
        TriggerHit(
            audio_time_s=c.time_s,
            source=TriggerSource.SPOTTER,
            matched_text=f"template[{c.template_index}]",
            score=c.cost,
        )
        for c in kept
    ]
