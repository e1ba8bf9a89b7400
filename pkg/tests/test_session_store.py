import struct

import numpy as np
import pytest

from calibcapture import session_store as ss
from calibcapture.errors import (
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
from helpers import write_minimal_session


# --- frame index -----------------------------------------------------------

def test_frame_index_two_rows(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("img0.pgm,1000\nimg1.pgm,2000\n")
    records = ss.load_frame_index(p)
    assert [(r.path, r.stamp) for r in records] == [("img0.pgm", 1000), ("img1.pgm", 2000)]


def test_frame_index_decreasing_stamp_names_line(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("a.pgm,2000\nb.pgm,1000\n")
    with pytest.raises(NonMonotonicStamp) as exc:
        ss.load_frame_index(p)
    assert exc.value.line_number == 2
    assert isinstance(exc.value, InvariantViolation)


def test_frame_index_empty_file(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("")
    assert ss.load_frame_index(p) == []


def test_frame_index_malformed_row(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("a.pgm,12\nnot-a-row\n")
    with pytest.raises(MalformedRow) as exc:
        ss.load_frame_index(p)
    assert exc.value.line_number == 2


def test_frame_index_bad_stamp(tmp_path):
    p = tmp_path / "idx.csv"
    p.write_text("a.pgm,12.5\n")
    with pytest.raises(MalformedRow):
        ss.load_frame_index(p)


def test_frame_index_order_preserved_random(tmp_path):
    rng = np.random.default_rng(5)
    stamps = np.cumsum(rng.integers(1, 10_000_000, 200))
    lines = "".join(f"f{i}.pgm,{s}\n" for i, s in enumerate(stamps))
    p = tmp_path / "idx.csv"
    p.write_text(lines)
    records = ss.load_frame_index(p)
    assert len(records) == 200
    assert [r.stamp for r in records] == list(stamps)


# --- PNM -------------------------------------------------------------------

def test_pgm_p5_2x2(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = ss.load_pnm(p)
    assert (img.width, img.height, img.channels) == (2, 2, 1)
    assert list(img.data) == [0, 255, 128, 64]


def test_ppm_p6_1x1(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([10, 20, 30]))
    img = ss.load_pnm(p)
    assert (img.width, img.height, img.channels) == (1, 1, 3)
    assert list(img.data) == [10, 20, 30]


def test_pgm_truncated(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128]))
    with pytest.raises(TruncatedData):
        ss.load_pnm(p)


def test_pnm_rejects_ascii_and_16bit(tmp_path):
    p = tmp_path / "a.pnm"
    p.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
    with pytest.raises(UnsupportedFormat):
        ss.load_pnm(p)
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(UnsupportedFormat):
        ss.load_pnm(p)


def test_pnm_header_comments(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1 # trailing\n255\n" + bytes([9, 7]))
    img = ss.load_pnm(p)
    assert (img.width, img.height) == (2, 1)
    assert list(img.data) == [9, 7]


def test_pnm_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(7)
    for channels in (1, 3):
        for trial in range(5):
            h, w = int(rng.integers(1, 20)), int(rng.integers(1, 20))
            pixels = rng.integers(0, 256, (h, w, channels), dtype=np.uint8)
            img = ss.ImageBuffer(w, h, channels, pixels)
            p = tmp_path / f"r{channels}_{trial}.pnm"
            ss.save_pnm(img, p)
            back = ss.load_pnm(p)
            assert back.width == w and back.height == h and back.channels == channels
            assert np.array_equal(back.pixels, pixels)


# --- WAV -------------------------------------------------------------------

def _wav_bytes(fmt_code, channels, rate, bits, payload: bytes) -> bytes:
    fmt = struct.pack(
        "<HHIIHH", fmt_code, channels, rate,
        rate * channels * bits // 8, channels * bits // 8, bits,
    )
    return (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )


def test_wav_mono_scaling(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(1, 1, 16000, 16, struct.pack("<h", 16384)))
    audio = ss.load_wav(p)
    assert audio.sample_rate_hz == 16000
    assert audio.samples[0] == 0.5


def test_wav_stereo_exact_average(tmp_path):
    # oracle: exact integer average then scale
    expected = ((-32768 + 32766) / 2) / 32768.0
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(1, 2, 16000, 16, struct.pack("<hh", -32768, 32766)))
    audio = ss.load_wav(p)
    assert audio.samples[0] == expected
    assert abs(expected - (-3.0517578125e-05)) == 0.0


def test_wav_float_encoding_rejected(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(3, 1, 16000, 32, struct.pack("<f", 0.5)))
    with pytest.raises(UnsupportedEncoding):
        ss.load_wav(p)


def test_wav_8bit_rejected(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(1, 1, 16000, 8, bytes([128])))
    with pytest.raises(UnsupportedEncoding):
        ss.load_wav(p)


def test_wav_malformed_riff(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFX\x00\x00\x00\x00WAVE")
    with pytest.raises(MalformedRiff):
        ss.load_wav(p)
    p.write_bytes(_wav_bytes(1, 1, 16000, 16, b"")[:20])
    with pytest.raises(MalformedRiff):
        ss.load_wav(p)


def test_wav_mono_resynthesis_exact(tmp_path):
    rng = np.random.default_rng(3)
    ints = rng.integers(-32768, 32768, 1000, dtype=np.int64)
    p = tmp_path / "x.wav"
    p.write_bytes(_wav_bytes(1, 1, 44100, 16, ints.astype("<i2").tobytes()))
    audio = ss.load_wav(p)
    resynth = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int64)
    assert np.array_equal(resynth, ints)


def test_save_wav_roundtrip(tmp_path):
    x = np.sin(np.linspace(0, 20, 5000)) * 0.7
    p = tmp_path / "x.wav"
    ss.save_wav(x, 16000, p)
    audio = ss.load_wav(p)
    assert audio.sample_rate_hz == 16000
    assert np.max(np.abs(audio.samples - x)) <= 0.5 / 32768


# --- manifest -----------------------------------------------------------------

def test_manifest_valid_five_cameras(tmp_path):
    write_minimal_session(tmp_path, n_cameras=5)
    manifest = ss.load_manifest(tmp_path / "manifest.json")
    assert len(manifest.cameras) == 5
    assert manifest.trigger_word == "capture"
    assert manifest.cameras[0].nominal_period_ns > 0


def test_manifest_zero_cameras_rejected(tmp_path):
    write_minimal_session(tmp_path)
    doc = (tmp_path / "manifest.json").read_text().replace(
        '"cameras": [{', '"cameras_off": [{'
    )
    (tmp_path / "manifest.json").write_text(doc)
    with pytest.raises(MalformedManifest):
        ss.load_manifest(tmp_path / "manifest.json")

    import json

    doc = json.loads((tmp_path / "manifest.json").read_text().replace("cameras_off", "cameras"))
    doc["cameras"] = []
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(MalformedManifest):
        ss.load_manifest(tmp_path / "manifest.json")


def test_manifest_decreasing_index_is_invariant_violation(tmp_path):
    write_minimal_session(tmp_path)
    (tmp_path / "index" / "cam0.csv").write_text("a.pgm,2000\nb.pgm,1500\n")
    with pytest.raises(InvariantViolation) as exc:
        ss.load_manifest(tmp_path / "manifest.json")
    assert "2" in str(exc.value)


def test_manifest_missing_audio(tmp_path):
    write_minimal_session(tmp_path)
    (tmp_path / "audio.wav").unlink()
    with pytest.raises(MissingFile):
        ss.load_manifest(tmp_path / "manifest.json")


def test_manifest_duplicate_camera_ids(tmp_path):
    import json

    write_minimal_session(tmp_path, n_cameras=2)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["cameras"][1]["id"] = "cam0"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(InvariantViolation):
        ss.load_manifest(tmp_path / "manifest.json")


def test_manifest_path_escape_rejected(tmp_path):
    import json

    write_minimal_session(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["audio"] = "../outside.wav"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(InvariantViolation):
        ss.load_manifest(tmp_path / "manifest.json")


def test_manifest_empty_trigger_rejected(tmp_path):
    import json

    write_minimal_session(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["trigger_word"] = "!!!"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(MalformedManifest):
        ss.load_manifest(tmp_path / "manifest.json")


def test_manifest_requires_anchor(tmp_path):
    import json

    write_minimal_session(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["clap_anchors"] = []
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(MalformedManifest):
        ss.load_manifest(tmp_path / "manifest.json")
