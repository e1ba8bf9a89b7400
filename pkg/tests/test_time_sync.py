import numpy as np
import pytest

from calibcapture import session_store as ss
from calibcapture import time_sync as ts
from calibcapture.audio_dsp import TriggerHit, TriggerSource
from calibcapture.errors import DegenerateAnchors, DriftTooLarge
from helpers import write_minimal_session

RNG = np.random.default_rng(2024)


def _hit(t):
    return TriggerHit(t, TriggerSource.TRANSCRIPT, "capture", 1.0)


# --- clock map fitting ---------------------------------------------------------

def test_single_anchor_offset():
    clock = ts.fit_clock_map([(5.0, 1_000_000_000_000)])
    assert clock.scale_a == 1.0
    assert ts.map_time(clock, 0.0) == 995_000_000_000


def test_two_anchor_exact_line():
    T = 1_700_000_000_000_000_000
    clock = ts.fit_clock_map([(0.0, T), (100.0, T + 100_000_000_000)])
    assert abs(clock.scale_a - 1.0) < 1e-9
    assert ts.map_time(clock, 0.0) == T


def test_clock_recovery_with_jitter_matches_polyfit():
    # forward model: a = 1.0001, b = 42 s, three anchors, 2 ms epoch jitter
    rng = np.random.default_rng(99)
    a_true, b_true = 1.0001, 42.0
    t = np.array([0.0, 150.0, 300.0])
    jit = rng.normal(0.0, 0.002, 3)
    anchors = [
        (float(ti), round((a_true * ti + b_true + j) * 1e9)) for ti, j in zip(t, jit)
    ]
    clock = ts.fit_clock_map(anchors)
    assert abs(clock.scale_a - a_true) < 1e-4
    assert abs(clock.offset_b_s - b_true) < 0.005

    coeffs = np.polyfit(t, [e / 1e9 for _, e in anchors], 1)
    assert abs(clock.scale_a - coeffs[0]) < 1e-12
    assert abs(clock.offset_b_s - coeffs[1]) < 1e-9


def test_fixed_scale_offset_is_mean_residual():
    anchors = [(1.0, 3_000_000_000), (2.0, 4_500_000_000), (4.0, 6_100_000_000)]
    clock = ts.fit_clock_map(anchors, fix_scale=True)
    assert clock.scale_a == 1.0
    expected = np.mean([e / 1e9 - t for t, e in anchors])
    assert clock.offset_b_s == pytest.approx(expected, abs=0)


def test_drift_too_large():
    with pytest.raises(DriftTooLarge):
        ts.fit_clock_map([(0.0, 0), (100.0, 102_000_000_000)])


def test_degenerate_anchors():
    with pytest.raises(DegenerateAnchors):
        ts.fit_clock_map([(5.0, 1_000), (5.0, 2_000)])


# --- trigger mapping ------------------------------------------------------------

def test_map_trigger_identity():
    clock = ts.ClockMap(1.0, 0.0)
    assert ts.map_trigger(clock, _hit(12.54)) == 12_540_000_000


def test_map_trigger_offset():
    clock = ts.ClockMap(1.0, 995.0)
    assert ts.map_trigger(clock, _hit(12.54)) == 1_007_540_000_000


def test_map_trigger_scale():
    # 1.0001 * 1000 s = 1000.1 s = 1_000_100_000_000 ns
    clock = ts.ClockMap(1.0001, 0.0)
    assert ts.map_trigger(clock, _hit(1000.0)) == 1_000_100_000_000


# --- frame resolution -------------------------------------------------------------

def _manifest(tmp_path, **kwargs):
    write_minimal_session(tmp_path, **kwargs)
    return ss.load_manifest(tmp_path / "manifest.json")


def test_resolve_exact_stamp(tmp_path):
    manifest = _manifest(tmp_path, n_cameras=1, n_frames=10)
    epoch = manifest.cameras[0].frames[4].stamp
    event = ts.resolve_frames(manifest, epoch)
    res = event.per_camera["cam0"]
    assert isinstance(res, ts.Resolution)
    assert res.frame_index == 4
    assert res.delta_ms == 0.0
    assert event.fully_synchronized


def test_resolve_midpoint_prefers_earlier(tmp_path):
    root = tmp_path / "s"
    root.mkdir()
    (root / "index").mkdir()
    (root / "index" / "cam0.csv").write_text(
        "a.pgm,1000000000\nb.pgm,1033000000\nc.pgm,1066000000\n"
    )
    write_minimal_session(tmp_path / "donor")
    import shutil, json

    shutil.copy(tmp_path / "donor" / "audio.wav", root / "audio.wav")
    shutil.copy(tmp_path / "donor" / "transcript.json", root / "transcript.json")
    (root / "manifest.json").write_text(
        json.dumps(
            {
                "cameras": [{"id": "cam0", "index": "index/cam0.csv"}],
                "audio": "audio.wav",
                "transcript": "transcript.json",
                "trigger_word": "capture",
                "clap_anchors": [{"audio_time_s": 0.0, "camera_epoch_ns": 1000000000}],
            }
        )
    )
    manifest = ss.load_manifest(root / "manifest.json")
    event = ts.resolve_frames(manifest, 1_016_500_000)  # exactly between a and b
    res = event.per_camera["cam0"]
    assert res.frame.path == "a.pgm"
    assert res.delta_ms == pytest.approx(16.5)


def test_resolve_gap_rejected(tmp_path):
    period = 33_000_000
    start = 1_000_000_000_000
    root = tmp_path
    write_minimal_session(root, n_cameras=2, n_frames=120, period_ns=period, start_ns=start)
    # knock a 2 s hole into cam1's stream
    lines = [
        f"frames/cam1/f{i:04d}.pgm,{start + i * period + (2_000_000_000 if i >= 10 else 0)}\n"
        for i in range(120)
    ]
    (root / "index" / "cam1.csv").write_text("".join(lines))
    manifest = ss.load_manifest(root / "manifest.json")
    epoch = start + 9 * period + 1_000_000_000  # inside cam1's gap
    event = ts.resolve_frames(manifest, epoch)
    assert isinstance(event.per_camera["cam1"], ts.Rejection)
    assert event.per_camera["cam1"].reason == "ToleranceExceeded"
    assert isinstance(event.per_camera["cam0"], ts.Resolution)
    assert not event.fully_synchronized


def test_nearest_matches_linear_scan_oracle():
    for _ in range(200):
        stamps = np.unique(RNG.integers(0, 10_000, size=RNG.integers(2, 40)))
        epoch = int(RNG.integers(-100, 10_100))
        got = ts.nearest_frame(stamps, epoch)
        deltas = np.abs(stamps - epoch)
        best = np.min(deltas)
        expect = int(np.nonzero(deltas == best)[0][0])  # earlier index on ties
        assert got == expect


def test_translation_invariance(tmp_path):
    manifest = _manifest(tmp_path, n_cameras=2, n_frames=12)
    shift = 777_000_123
    epochs = [manifest.cameras[0].frames[i].stamp + 13_000_000 for i in range(4)]
    base = [ts.resolve_frames(manifest, e) for e in epochs]

    shifted_root = tmp_path / "shifted"
    write_minimal_session(
        shifted_root, n_cameras=2, n_frames=12, start_ns=1_000_000_000_000 + shift
    )
    manifest2 = ss.load_manifest(shifted_root / "manifest.json")
    moved = [ts.resolve_frames(manifest2, e + shift) for e in epochs]
    for b, m in zip(base, moved):
        for cam_id in b.per_camera:
            rb, rm = b.per_camera[cam_id], m.per_camera[cam_id]
            assert type(rb) is type(rm)
            if isinstance(rb, ts.Resolution):
                assert rb.frame_index == rm.frame_index
                assert rb.delta_ms == rm.delta_ms


def test_sync_window_controls_full_flag(tmp_path):
    import json, shutil

    root = tmp_path / "s"
    root.mkdir()
    (root / "index").mkdir()
    # two cameras offset by 60 ms: nearest stamps straddle the 50 ms window
    (root / "index" / "cam0.csv").write_text(
        "".join(f"a{i}.pgm,{1_000_000_000 + i * 100_000_000}\n" for i in range(10))
    )
    (root / "index" / "cam1.csv").write_text(
        "".join(f"b{i}.pgm,{1_060_000_000 + i * 100_000_000}\n" for i in range(10))
    )
    write_minimal_session(tmp_path / "donor")
    shutil.copy(tmp_path / "donor" / "audio.wav", root / "audio.wav")
    shutil.copy(tmp_path / "donor" / "transcript.json", root / "transcript.json")
    (root / "manifest.json").write_text(
        json.dumps(
            {
                "cameras": [
                    {"id": "cam0", "index": "index/cam0.csv"},
                    {"id": "cam1", "index": "index/cam1.csv"},
                ],
                "audio": "audio.wav",
                "transcript": "transcript.json",
                "trigger_word": "capture",
                "clap_anchors": [{"audio_time_s": 0.0, "camera_epoch_ns": 1000000000}],
            }
        )
    )
    manifest = ss.load_manifest(root / "manifest.json")
    # epoch equidistant from cam0's 1.50 s and cam1's 1.56 s stamps
    event = ts.resolve_frames(manifest, 1_530_000_000)
    assert all(isinstance(r, ts.Resolution) for r in event.per_camera.values())
    assert event.span_ms == pytest.approx(60.0)
    assert not event.fully_synchronized  # resolved everywhere, but outside the window
    wide = ts.resolve_frames(manifest, 1_530_000_000, sync_window_ms=80.0)
    assert wide.fully_synchronized


def test_report_counts_invariant(tmp_path):
    manifest = _manifest(tmp_path, n_cameras=2, n_frames=8)
    first = manifest.cameras[0].frames[0].stamp
    last = manifest.cameras[0].frames[-1].stamp
    epochs = [first, last + 50_000_000_000, first + 33_000_000, last + 60_000_000]
    events = [
        ts.resolve_frames(manifest, e, view_id=i) for i, e in enumerate(epochs)
    ]
    report = ts.build_sync_report(events)
    assert report.n_triggers == len(events)
    assert (
        report.n_fully_synchronized + report.n_partial + report.n_rejected
        == report.n_triggers
    )
    assert report.n_rejected >= 1  # the far-future epoch resolves nowhere
