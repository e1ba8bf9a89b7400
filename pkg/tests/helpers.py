"""Shared test utilities: brute-force oracles and on-disk session builders."""

import json

import numpy as np

from calibcapture.session_store import save_wav


def enumerate_dtw_paths(n: int, m: int):
    """All monotone alignment paths from (0,0) to (n-1,m-1) with steps
    {(1,0),(0,1),(1,1)}. Exponential; keep n, m tiny."""
    paths = []

    def walk(i, j, path):
        if i == n - 1 and j == m - 1:
            paths.append(list(path))
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            ni, nj = i + di, j + dj
            if ni < n and nj < m:
                path.append((ni, nj))
                walk(ni, nj, path)
                path.pop()

    walk(0, 0, [(0, 0)])
    return paths


def brute_dtw(dist: np.ndarray):
    """Minimum summed cost over all alignment paths, with the set of
    (total, length) pairs achieving it within 1e-9."""
    n, m = dist.shape
    totals = []
    for path in enumerate_dtw_paths(n, m):
        totals.append((sum(dist[i, j] for i, j in path), len(path)))
    best = min(t for t, _ in totals)
    achieving = [(t, l) for t, l in totals if t <= best + 1e-9]
    return best, achieving


def write_minimal_session(
    root,
    n_cameras: int = 2,
    n_frames: int = 6,
    period_ns: int = 66_666_667,
    start_ns: int = 1_000_000_000_000,
    trigger_word: str = "capture",
    words=None,
    anchors=None,
):
    """A tiny but fully valid session directory (no frame images)."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "index").mkdir(exist_ok=True)
    cameras = []
    for c in range(n_cameras):
        cam_id = f"cam{c}"
        lines = []
        for i in range(n_frames):
            lines.append(f"frames/{cam_id}/f{i:04d}.pgm,{start_ns + i * period_ns}\n")
        (root / "index" / f"{cam_id}.csv").write_text("".join(lines))
        cameras.append({"id": cam_id, "index": f"index/{cam_id}.csv"})

    save_wav(np.zeros(16000), 16000, root / "audio.wav")

    if words is None:
        words = [{"word": "Capture!", "start": 0.30, "end": 0.70}]
    (root / "transcript.json").write_text(
        json.dumps({"segments": [{"words": words}]})
    )

    if anchors is None:
        anchors = [{"audio_time_s": 0.0, "camera_epoch_ns": start_ns}]
    manifest = {
        "cameras": cameras,
        "audio": "audio.wav",
        "transcript": "transcript.json",
        "trigger_word": trigger_word,
        "clap_anchors": anchors,
    }
    (root / "manifest.json").write_text(json.dumps(manifest))
    return root / "manifest.json"
