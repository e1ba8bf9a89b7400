"""calib-capture command line: extract, calibrate, report, synth.

Exit codes are a stable contract: 0 success, 1 input error, 2 extraction
produced too few synchronized events, 3 solver failure or RMS above the
acceptance bound, 4 disconnected camera graph.
"""

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import audio_dsp, calib_solver, image_quality, synth, time_sync
from .calib_solver import CalibrationProblem, LmConfig, TargetGeometry
from .camera_models import pose_inverse
from .errors import (
    CalibCaptureError,
    DisconnectedGraph,
    DivergedOrStalled,
    InsufficientSharedViews,
    InvalidConfig,
    MissingFile,
    NotEnoughViews,
)
from .session_store import load_manifest, load_wav

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EXTRACTION = 2
EXIT_SOLVER = 3
EXIT_GRAPH = 4

SYNC_REPORT_NAME = "sync_report.json"
EXTRACTED_LIST_NAME = "extracted_frames.csv"
RESULT_NAME = "calibration.json"
SVG_NAME = "convergence.svg"


@dataclass
class PipelineConfig:
    min_views: int = 3
    tolerance_factor: float = 1.5
    sync_window_ms: float = 50.0
    refine_radius: int = 2
    trigger_min_separation_s: float = 1.0
    clap_ratio_k: float = 8.0
    clap_abs_floor: float = 0.05
    clap_min_separation_s: float = 0.5
    spotter_threshold: float = 0.45
    spotter_min_separation_s: float = 1.0
    lm_max_iter: int = 200
    lm_lambda0: float = 1e-3
    huber_delta_px: float | None = None
    assumed_fov_deg: float = 180.0
    max_rms_px: float = 0.5
    threads: int = 1


def load_pipeline_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise InvalidConfig("config must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    for key in doc:
        if key not in known:
            raise InvalidConfig(f"unknown config key {key!r}")
    return PipelineConfig(**doc)


def _lm_config(cfg: PipelineConfig, refine_intrinsics_jointly: bool = False) -> LmConfig:
    return LmConfig(
        lambda0=cfg.lm_lambda0,
        max_iter=cfg.lm_max_iter,
        huber_delta_px=cfg.huber_delta_px,
        assumed_fov_deg=cfg.assumed_fov_deg,
        refine_intrinsics_jointly=refine_intrinsics_jointly,
    )


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

def _spotter_hits(manifest, templates_dir, cfg: PipelineConfig):
    template_paths = sorted(Path(templates_dir).glob("*.wav"))
    if not template_paths:
        raise MissingFile(f"no template WAVs under {templates_dir}")
    audio = load_wav(manifest.audio_path)
    seq = audio_dsp.mfcc(audio)
    templates = [audio_dsp.mfcc(load_wav(p)) for p in template_paths]
    spot_cfg = audio_dsp.SpotterConfig(
        threshold=cfg.spotter_threshold,
        min_separation_s=cfg.spotter_min_separation_s,
    )
    return audio_dsp.spot_keyword(seq, templates, spot_cfg)


def cmd_extract(args) -> int:
    cfg = args.pipeline_config
    session_dir = Path(args.session_dir)
    manifest = load_manifest(session_dir / "manifest.json")

    words = audio_dsp.parse_transcript(manifest.transcript_path)
    hits = audio_dsp.find_triggers(
        words, manifest.trigger_word, cfg.trigger_min_separation_s
    )
    source = "transcript"
    if not hits and args.spotter:
        hits = _spotter_hits(manifest, args.spotter, cfg)
        source = "spotter"
    if not hits:
        print("no trigger events found (0 fully synchronized)", file=sys.stderr)
        return EXIT_EXTRACTION

    clock = time_sync.fit_clock_map(manifest.clap_anchors)
    events = []
    for k, hit in enumerate(hits):
        epoch = time_sync.map_trigger(clock, hit)
        event = time_sync.resolve_frames(
            manifest,
            epoch,
            tolerance_factor=cfg.tolerance_factor,
            sync_window_ms=cfg.sync_window_ms,
            view_id=k,
            audio_time_s=hit.audio_time_s,
        )
        event.source = source
        events.append(event)

    # sharpness refinement within the configured neighborhood
    quality: dict[tuple[int, str], dict | None] = {}
    image_sizes: dict[str, list[int]] = {}
    for event in events:
        for cam in manifest.cameras:
            res = event.per_camera.get(cam.camera_id)
            if not isinstance(res, time_sync.Resolution):
                continue
            try:
                best_idx, score = image_quality.refine_selection(
                    cam, res.frame_index, cfg.refine_radius, base_dir=manifest.root
                )
            except MissingFile:
                quality[(event.view_id, cam.camera_id)] = None
                continue
            if cam.camera_id not in image_sizes:
                from .session_store import load_pnm

                img = load_pnm(manifest.root / cam.frames[best_idx].path)
                image_sizes[cam.camera_id] = [img.width, img.height]
            if best_idx != res.frame_index:
                frame = cam.frames[best_idx]
                delta_ms = abs(frame.stamp - event.camera_epoch) / 1e6
                event.per_camera[cam.camera_id] = time_sync.Resolution(
                    frame, best_idx, delta_ms
                )
            quality[(event.view_id, cam.camera_id)] = {
                "laplacian_variance": score.laplacian_variance,
                "tenengrad": score.tenengrad,
                "accepted": score.accepted,
                "chosen_offset": score.chosen_offset,
            }

    report = time_sync.build_sync_report(events)
    doc = {
        "n_triggers": report.n_triggers,
        "n_fully_synchronized": report.n_fully_synchronized,
        "n_partial": report.n_partial,
        "n_rejected": report.n_rejected,
        "per_camera_rejections": report.per_camera_rejections,
        "clock": {
            "scale_a": clock.scale_a,
            "offset_b_s": clock.offset_b_s,
            "residual_rms_s": clock.residual_rms_s,
            "n_anchors": clock.n_anchors,
        },
        "cameras": {
            cam.camera_id: {
                "nominal_period_ms": cam.nominal_period_ns / 1e6,
                "image_size": image_sizes.get(cam.camera_id),
            }
            for cam in manifest.cameras
        },
        "triggers": [],
    }
    lines = []
    for event in events:
        cams_doc = {}
        for cam_id, res in event.per_camera.items():
            if isinstance(res, time_sync.Resolution):
                cams_doc[cam_id] = {
                    "status": "resolved",
                    "path": res.frame.path,
                    "stamp_ns": res.frame.stamp,
                    "frame_index": res.frame_index,
                    "delta_ms": res.delta_ms,
                    "quality": quality.get((event.view_id, cam_id)),
                }
                lines.append(
                    f"{event.view_id},{cam_id},{res.frame.path},{res.frame.stamp}\n"
                )
            else:
                cams_doc[cam_id] = {
                    "status": "rejected",
                    "reason": res.reason,
                    "nearest_delta_ms": res.nearest_delta_ms,
                }
        doc["triggers"].append(
            {
                "view_id": event.view_id,
                "audio_time_s": event.audio_time_s,
                "camera_epoch_ns": event.camera_epoch,
                "source": event.source,
                "fully_synchronized": event.fully_synchronized,
                "span_ms": event.span_ms,
                "cameras": cams_doc,
            }
        )
    with open(session_dir / SYNC_REPORT_NAME, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(session_dir / EXTRACTED_LIST_NAME, "w", encoding="utf-8") as fh:
        fh.writelines(lines)

    print(
        f"{report.n_triggers} triggers ({source}): "
        f"{report.n_fully_synchronized} fully synchronized, "
        f"{report.n_partial} partial, {report.n_rejected} rejected"
    )
    if report.n_fully_synchronized < cfg.min_views:
        print(
            f"only {report.n_fully_synchronized} fully synchronized events "
            f"(need {cfg.min_views})",
            file=sys.stderr,
        )
        return EXIT_EXTRACTION
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def _camera_models(report_cams, meta, args) -> dict[str, str]:
    models = {cam: "pinhole" for cam in report_cams}
    if meta and "models" in meta:
        models.update({c: m for c, m in meta["models"].items() if c in models})
    flag_models = args.model or []
    flag_cams = args.camera or []
    if len(flag_models) == 1 and not flag_cams:
        models = {cam: flag_models[0] for cam in models}
    elif flag_models:
        if len(flag_models) != len(flag_cams):
            raise InvalidConfig("--model and --camera must be paired")
        for cam, model in zip(flag_cams, flag_models):
            if cam not in models:
                raise InvalidConfig(f"--camera {cam!r}: not in the session")
            models[cam] = model
    return models


def cmd_calibrate(args) -> int:
    cfg = args.pipeline_config
    session_dir = Path(args.session_dir)
    report_path = session_dir / SYNC_REPORT_NAME
    if not report_path.is_file():
        raise MissingFile(f"{report_path} (run extract first)")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)

    obs_path = Path(args.observations) if args.observations else session_dir / "observations.csv"
    observations = calib_solver.read_observations(obs_path)

    meta = None
    meta_path = session_dir / synth.CALIB_META_NAME
    if meta_path.is_file():
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    if args.target_rows:
        target = TargetGeometry(args.target_rows, args.target_cols, args.target_spacing)
    elif meta:
        target = TargetGeometry(
            meta["target"]["rows"], meta["target"]["cols"], meta["target"]["spacing_m"]
        )
    else:
        raise InvalidConfig("no calib_meta.json: pass --target-rows/--target-cols/--target-spacing")

    camera_ids = list(report["cameras"].keys())
    models = _camera_models(camera_ids, meta, args)

    image_sizes = {}
    for cam in camera_ids:
        size = None
        if meta and cam in meta.get("image_sizes", {}):
            size = meta["image_sizes"][cam]
        elif report["cameras"][cam].get("image_size"):
            size = report["cameras"][cam]["image_size"]
        if size:
            image_sizes[cam] = tuple(size)

    resolved: dict[str, set[int]] = {cam: set() for cam in camera_ids}
    fully_synced: list[int] = []
    for ev in report["triggers"]:
        if ev["fully_synchronized"]:
            fully_synced.append(ev["view_id"])
        for cam_id, res in ev["cameras"].items():
            if res.get("status") == "resolved":
                resolved.setdefault(cam_id, set()).add(ev["view_id"])

    usable = [o for o in observations if o.view_id in resolved.get(o.camera_id, set())]
    problem = CalibrationProblem(target, usable, camera_ids, models)
    result = calib_solver.calibrate(
        problem,
        _lm_config(cfg, args.refine_intrinsics_jointly),
        image_sizes=image_sizes,
        extrinsic_view_ids=fully_synced if len(camera_ids) > 1 else None,
    )

    out_path = Path(args.out) if args.out else session_dir / RESULT_NAME
    calib_solver.save_result(result, out_path)

    max_rms = args.max_rms if args.max_rms is not None else cfg.max_rms_px
    print(f"RMS {result.rms_px:.4f} px over {len(usable)} observations -> {out_path}")
    for cam in camera_ids:
        print(f"  {cam}: stage RMS {result.per_camera_rms.get(cam, float('nan')):.4f} px")
    if result.rms_px > max_rms:
        print(f"RMS {result.rms_px:.4f} px exceeds bound {max_rms}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _write_convergence_svg(trace, path) -> None:
    width, height = 640, 400
    margin = 56
    costs = [max(c, 1e-300) for _, c, _ in trace]
    xs = [it for it, _, _ in trace]
    logs = [math.log10(c) for c in costs]
    lo, hi = min(logs), max(logs)
    if hi - lo < 1e-9:
        hi = lo + 1.0
    x_span = max(xs[-1] - xs[0], 1)

    def px(it):
        return margin + (width - 2 * margin) * (it - xs[0]) / x_span

    def py(lv):
        return height - margin - (height - 2 * margin) * (lv - lo) / (hi - lo)

    pts = " ".join(f"{px(it):.1f},{py(lv):.1f}" for it, lv in zip(xs, logs))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">iteration</text>',
        f'<text x="16" y="{height / 2:.0f}" font-size="13" '
        f'transform="rotate(-90 16 {height / 2:.0f})" text-anchor="middle">log10 cost</text>',
        f'<polyline points="{pts}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>',
    ]
    for it, lv in zip(xs, logs):
        parts.append(f'<circle cx="{px(it):.1f}" cy="{py(lv):.1f}" r="2.5" fill="#1f6fb2"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_report(args) -> int:
    result = calib_solver.load_result(args.result)
    print(f"cameras: {', '.join(result.camera_ids)}")
    print(f"overall RMS: {result.rms_px:.6f} px ({result.termination})")
    for cam in result.camera_ids:
        K = result.intrinsics[cam]
        print(f"\n[{cam}] {type(K).__name__}")
        for name, val in vars(K).items():
            print(f"  {name:6s} = {val:.6f}")
        rms = result.per_camera_rms.get(cam)
        if rms is not None:
            print(f"  stage RMS = {rms:.6f} px")
    if len(result.camera_ids) > 1:
        ref = result.camera_ids[0]
        print(f"\nextrinsics relative to {ref}:")
        for cam in result.camera_ids[1:]:
            T = result.extrinsics.get(cam)
            if T is None:
                continue
            pos = pose_inverse(T).t  # camera position in the reference frame
            angle = 2 * math.degrees(math.acos(min(1.0, abs(float(T.q[0])))))
            print(
                f"  {cam}: position ({pos[0]:+.4f}, {pos[1]:+.4f}, {pos[2]:+.4f}) m, "
                f"rotation {angle:.3f} deg"
            )
    if len(result.per_view_rms) > 0:
        worst = sorted(result.per_view_rms.items(), key=lambda kv: -kv[1])[:5]
        print("\nworst views (RMS px): " + ", ".join(f"{v}:{r:.4f}" for v, r in worst))

    if not result.trace:
        print("warning: empty trace, skipping convergence plot", file=sys.stderr)
        return EXIT_OK
    svg_path = Path(args.svg) if args.svg else Path(args.result).parent / SVG_NAME
    _write_convergence_svg(result.trace, svg_path)
    print(f"\nconvergence plot -> {svg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = synth.config_from_dict(doc)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest, gt = synth.generate_session(cfg, args.out_dir)
    print(
        f"session -> {args.out_dir}: {len(manifest.cameras)} cameras, "
        f"{len(gt['events'])} events, seed {cfg.seed}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calib-capture",
        description="speech-triggered multi-camera calibration pipeline",
    )
    parser.add_argument("--config", help="JSON file overriding pipeline defaults")
    parser.add_argument("--threads", type=int, default=1, help="reserved; kernels run single threaded")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="resolve trigger events to synchronized frames")
    p.add_argument("session_dir")
    p.add_argument("--spotter", help="directory of template WAVs for transcript-free sessions")
    p.add_argument("--min-views", type=int, default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("calibrate", help="estimate intrinsics and extrinsics")
    p.add_argument("session_dir")
    p.add_argument("--observations", help="observations CSV (default: session dir)")
    p.add_argument("--out", help="result JSON path (default: session/calibration.json)")
    p.add_argument("--max-rms", type=float, default=None)
    p.add_argument("--model", action="append", choices=["pinhole", "double_sphere"])
    p.add_argument("--camera", action="append")
    p.add_argument("--target-rows", type=int)
    p.add_argument("--target-cols", type=int)
    p.add_argument("--target-spacing", type=float)
    p.add_argument("--refine-intrinsics-jointly", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="summarize a result and plot convergence")
    p.add_argument("result")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic session")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
        if args.threads < 1:
            raise InvalidConfig("--threads must be >= 1")
        if getattr(args, "min_views", None) is not None:
            cfg.min_views = args.min_views
        args.pipeline_config = cfg
        return args.func(args)
    except (DisconnectedGraph, InsufficientSharedViews) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRAPH
    except (DivergedOrStalled, NotEnoughViews) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (json.JSONDecodeError, OSError, CalibCaptureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
