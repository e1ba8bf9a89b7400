import json
import math

import numpy as np
import pytest
import scipy.fft

from calibcapture import audio_dsp as dsp
from calibcapture.errors import (
    AudioTooShort,
    InvalidConfig,
    MalformedTranscript,
    TemplateTooShort,
)
from calibcapture.session_store import AudioBuffer

RNG = np.random.default_rng(77)


# --- transcript parsing ------------------------------------------------------

def _write(tmp_path, doc):
    p = tmp_path / "t.json"
    p.write_text(json.dumps(doc))
    return p


def test_parse_single_word(tmp_path):
    p = _write(
        tmp_path,
        {"segments": [{"words": [{"word": "Capture!", "start": 12.30, "end": 12.78}]}]},
    )
    words = dsp.parse_transcript(p)
    assert len(words) == 1
    assert words[0].text == "Capture!"
    assert (words[0].start_s, words[0].end_s) == (12.30, 12.78)


def test_parse_drops_untimestamped_words(tmp_path):
    p = _write(
        tmp_path,
        {
            "segments": [
                {"words": [{"word": "a", "start": 1.0, "end": 1.2}, {"word": "b", "start": 2.0}]}
            ]
        },
    )
    parse = dsp.parse_transcript_detailed(p)
    assert len(parse.words) == 1
    assert parse.dropped == 1


def test_parse_empty_segments(tmp_path):
    assert dsp.parse_transcript(_write(tmp_path, {"segments": []})) == []


def test_parse_orders_by_start(tmp_path):
    p = _write(
        tmp_path,
        {
            "segments": [
                {"words": [{"word": "late", "start": 5.0, "end": 5.5}]},
                {"words": [{"word": "early", "start": 1.0, "end": 1.5}]},
            ]
        },
    )
    words = dsp.parse_transcript(p)
    assert [w.text for w in words] == ["early", "late"]


def test_parse_bad_type_names_field_path(tmp_path):
    p = _write(
        tmp_path,
        {"segments": [{"words": [{"word": "x", "start": "soon", "end": 2.0}]}]},
    )
    with pytest.raises(MalformedTranscript) as exc:
        dsp.parse_transcript(p)
    assert "segments[0].words[0].start" in str(exc.value)


def test_parse_rejects_negative_interval(tmp_path):
    p = _write(
        tmp_path, {"segments": [{"words": [{"word": "x", "start": 3.0, "end": 2.0}]}]}
    )
    with pytest.raises(MalformedTranscript):
        dsp.parse_transcript(p)


# --- trigger extraction -------------------------------------------------------

def test_trigger_time_is_mean_of_endpoints():
    words = [dsp.WordSegment("Capture!", 12.30, 12.78)]
    hits = dsp.find_triggers(words, "capture")
    assert len(hits) == 1
    assert hits[0].audio_time_s == (12.30 + 12.78) / 2.0  # exactly 12.54


def test_trigger_matching_is_selective():
    words = [
        dsp.WordSegment("please", 1.0, 1.3),
        dsp.WordSegment("capture", 2.0, 2.4),
        dsp.WordSegment("now", 3.0, 3.2),
    ]
    assert len(dsp.find_triggers(words, "capture")) == 1


def test_trigger_mean_rule_bit_exact_random():
    # the emitted time must equal (start+end)/2 in floating point, verbatim
    for _ in range(300):
        a = float(RNG.integers(0, 10_000)) / 64.0
        b = a + float(RNG.integers(1, 1000)) / 128.0
        hits = dsp.find_triggers([dsp.WordSegment("capture", a, b)], "Capture!")
        assert hits[0].audio_time_s == (a + b) / 2.0


def test_trigger_merge_keeps_earlier():
    words = [
        dsp.WordSegment("capture", 5.0, 5.4),
        dsp.WordSegment("capture", 5.6, 6.0),  # 0.6 s later: merged away
        dsp.WordSegment("capture", 9.0, 9.4),
    ]
    hits = dsp.find_triggers(words, "capture")
    assert [h.audio_time_s for h in hits] == [5.2, 9.2]


def test_fifty_prompts_give_fifty_hits():
    words = []
    for k in range(50):
        t = 5.0 * k
        words.append(dsp.WordSegment("Capture!", t, t + 0.4))
        words.append(dsp.WordSegment("hold", t + 2.0, t + 2.3))
    assert len(dsp.find_triggers(words, "capture")) == 50


def test_normalization_idempotent():
    for w in ["Capture!", "  CAPTURE.", "ca-pt'ure", "Schieß!", "x1y2"]:
        once = dsp.normalize_word(w)
        assert dsp.normalize_word(once) == once


def test_empty_trigger_rejected():
    with pytest.raises(InvalidConfig):
        dsp.find_triggers([], "!!!")


# --- clap detection --------------------------------------------------------------

def _impulse_audio(rate=16000, at_s=3.0, amplitude=0.9, noise_db=-40.0, seconds=6.0):
    rng = np.random.default_rng(11)
    x = rng.normal(0.0, 10 ** (noise_db / 20.0), int(seconds * rate))
    n = int(0.005 * rate)
    t = np.arange(n) / rate
    burst = amplitude * np.exp(-t / 0.002) * np.cos(2 * math.pi * 3000 * t)
    i0 = int(at_s * rate)
    x[i0 : i0 + n] += burst
    return AudioBuffer(rate, np.clip(x, -1, 1))


def test_claps_silence_empty():
    audio = AudioBuffer(16000, np.zeros(16000))
    assert dsp.detect_claps(audio) == []


def test_clap_impulse_found_within_10ms():
    audio = _impulse_audio()
    events = dsp.detect_claps(audio)
    assert len(events) == 1
    oracle_t = np.argmax(np.abs(audio.samples)) / audio.sample_rate_hz
    assert abs(events[0].audio_time_s - 3.0) <= 0.010
    assert abs(events[0].audio_time_s - oracle_t) <= 0.010
    assert events[0].envelope_ratio >= 8.0


def test_two_impulses_100ms_apart_merge():
    rate = 16000
    audio = _impulse_audio(rate=rate)
    x = audio.samples.copy()
    n = int(0.005 * rate)
    t = np.arange(n) / rate
    burst = 0.7 * np.exp(-t / 0.002) * np.cos(2 * math.pi * 3000 * t)
    i0 = int(3.1 * rate)
    x[i0 : i0 + n] += burst
    events = dsp.detect_claps(AudioBuffer(rate, np.clip(x, -1, 1)))
    assert len(events) == 1
    assert events[0].audio_time_s < 3.05  # earlier one kept


def test_clap_times_scale_invariant():
    audio = _impulse_audio()
    base = [e.audio_time_s for e in dsp.detect_claps(audio)]
    for c in (0.5, 0.2):
        scaled = AudioBuffer(audio.sample_rate_hz, audio.samples * c)
        times = [e.audio_time_s for e in dsp.detect_claps(scaled)]
        assert times == base  # argmax refinement is scale-exact


# --- MFCC ------------------------------------------------------------------------

def _reference_mfcc(x, rate, window_s=0.025, hop_s=0.010, n_mels=26, n_coeffs=13):
    """Independent implementation: full DFT, loop-built filterbank, explicit
    orthonormal DCT-II."""
    win = round(window_s * rate)
    hop = round(hop_s * rate)
    n_frames = 1 + (len(x) - win) // hop
    hann = np.hanning(win)
    nyq = rate / 2.0

    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def imel(m):
        return 700.0 * (10 ** (m / 2595.0) - 1.0)

    pts = [imel(mel(nyq) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    n_bins = win // 2 + 1
    freqs = [k * rate / win for k in range(n_bins)]
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = pts[m], pts[m + 1], pts[m + 2]
        for k, f in enumerate(freqs):
            if lo <= f <= mid:
                bank[m, k] = (f - lo) / (mid - lo)
            elif mid < f <= hi:
                bank[m, k] = (hi - f) / (hi - mid)

    out = np.zeros((n_frames, n_coeffs))
    for i in range(n_frames):
        frame = x[i * hop : i * hop + win] * hann
        spectrum = np.fft.fft(frame)[:n_bins]
        power = np.abs(spectrum) ** 2
        logmel = np.log(np.maximum(bank @ power, 1e-10))
        for k in range(n_coeffs):
            s = sum(
                logmel[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * n_mels))
                for n in range(n_mels)
            )
            scale = math.sqrt(1.0 / (4 * n_mels)) if k == 0 else math.sqrt(1.0 / (2 * n_mels))
            out[i, k] = 2 * s * scale
    return out


def test_mfcc_sine_frame_count_and_constancy():
    rate = 16000
    t = np.arange(rate) / rate
    audio = AudioBuffer(rate, 0.5 * np.sin(2 * math.pi * 1000 * t))
    seq = dsp.mfcc(audio)
    assert len(seq) == 98
    spread = seq.frames.max(axis=0) - seq.frames.min(axis=0)
    assert np.max(spread) < 1e-6  # 1 kHz is periodic in the hop


def test_mfcc_matches_reference_implementation():
    rate = 16000
    rng = np.random.default_rng(42)
    x = rng.normal(0, 0.1, int(0.2 * rate))
    audio = AudioBuffer(rate, x)
    seq = dsp.mfcc(audio)
    ref = _reference_mfcc(x, rate)
    np.testing.assert_allclose(seq.frames, ref, atol=1e-6)


def test_mfcc_zero_audio_constant_dc_only():
    audio = AudioBuffer(16000, np.zeros(8000))
    seq = dsp.mfcc(audio)
    assert np.all(seq.frames == seq.frames[0])
    assert abs(seq.frames[0, 0]) > 1.0
    assert np.max(np.abs(seq.frames[0, 1:])) < 1e-9


def test_mfcc_too_short():
    with pytest.raises(AudioTooShort):
        dsp.mfcc(AudioBuffer(16000, np.zeros(100)))


# --- DTW ----------------------------------------------------------------------

def _seq(frames):
    return dsp.MfccSequence(hop_s=0.010, frames=np.asarray(frames, dtype=float))


def test_dtw_self_distance_zero():
    a = _seq(RNG.normal(size=(12, 13)))
    assert dsp.dtw_distance(a, a) == 0.0


def test_dtw_nonnegative_and_symmetric():
    for _ in range(20):
        a = _seq(RNG.normal(size=(RNG.integers(2, 7), 13)))
        b = _seq(RNG.normal(size=(RNG.integers(2, 7), 13)))
        d_ab = dsp.dtw_distance(a, b)
        d_ba = dsp.dtw_distance(b, a)
        assert d_ab >= 0
        assert abs(d_ab - d_ba) < 1e-12
        assert d_ab > 0  # random real sequences never align at zero cost


# --- keyword spotting ----------------------------------------------------------

def test_spotter_self_match():
    tmpl = _seq(RNG.normal(size=(20, 13)))
    hits = dsp.spot_keyword(tmpl, [tmpl])
    assert len(hits) == 1
    assert hits[0].score == 0.0
    assert abs(hits[0].audio_time_s - 20 / 2 * 0.010) < 0.02


def _chirp(rate, seconds=0.6, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amplitude * np.sin(2 * math.pi * (300 * t + 1500 * t * t)) * np.hanning(t.size)


def test_spotter_template_embedded_in_silence():
    rate = 16000
    template_wave = _chirp(rate)
    x = np.zeros(6 * rate)
    x[2 * rate : 2 * rate + template_wave.size] += template_wave
    seq = dsp.mfcc(AudioBuffer(rate, x))
    tmpl = dsp.mfcc(AudioBuffer(rate, template_wave))
    hits = dsp.spot_keyword(seq, [tmpl])
    assert len(hits) == 1
    expected = 2.0 + 0.6 / 2
    assert abs(hits[0].audio_time_s - expected) <= 0.05
    assert hits[0].source is dsp.TriggerSource.SPOTTER


def test_spotter_template_embedded_in_noise():
    # the template is an excerpt of real audio, so it carries the same noise
    # floor as the session recording
    rate = 16000
    rng = np.random.default_rng(9)
    noise_sigma = 0.003
    chirp = _chirp(rate)
    template_wave = chirp + rng.normal(0, noise_sigma, chirp.size)
    x = rng.normal(0, noise_sigma, 6 * rate)
    x[2 * rate : 2 * rate + chirp.size] += chirp
    seq = dsp.mfcc(AudioBuffer(rate, x))
    tmpl = dsp.mfcc(AudioBuffer(rate, template_wave))
    hits = dsp.spot_keyword(seq, [tmpl])
    assert len(hits) == 1
    assert abs(hits[0].audio_time_s - (2.0 + 0.3)) <= 0.05


def test_spotter_pure_noise_no_hits():
    rate = 16000
    rng = np.random.default_rng(10)
    seq = dsp.mfcc(AudioBuffer(rate, rng.normal(0, 0.05, 10 * rate)))
    template_wave = np.sin(2 * math.pi * 700 * np.arange(int(0.5 * rate)) / rate)
    tmpl = dsp.mfcc(AudioBuffer(rate, 0.4 * template_wave * np.hanning(template_wave.size)))
    assert dsp.spot_keyword(seq, [tmpl]) == []


def test_spotter_template_too_short():
    tmpl = _seq(RNG.normal(size=(3, 13)))
    seq = _seq(RNG.normal(size=(50, 13)))
    with pytest.raises(TemplateTooShort):
        dsp.spot_keyword(seq, [tmpl])
