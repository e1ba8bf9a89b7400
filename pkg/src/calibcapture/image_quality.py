"""Sharpness scoring of candidate frames.

Scores are only compared within a small temporal neighborhood of the same
camera, never against absolute thresholds, so they stay scale-free across
scenes and lenses. Borders are excluded from both metrics rather than padded.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ImageTooSmall, MissingFile
from .session_store import CameraStreamDescriptor, ImageBuffer, load_pnm

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class QualityScore:
    laplacian_variance: float
    tenengrad: float
    accepted: bool
    chosen_offset: int  # frames relative to the originally selected frame


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """BT.601 luma with round-half-up; single-channel images pass through."""
    if img.channels == 1:
        return img
    rgb = img.pixels.astype(np.float64)
    luma = (
        LUMA_WEIGHTS[0] * rgb[:, :, 0]
        + LUMA_WEIGHTS[1] * rgb[:, :, 1]
        + LUMA_WEIGHTS[2] * rgb[:, :, 2]
    )
    gray = np.floor(luma + 0.5).astype(np.uint8)[:, :, None]
    return ImageBuffer(img.width, img.height, 1, gray)


def _interior_gray(img: ImageBuffer) -> np.ndarray:
    gray = to_grayscale(img)
    if gray.width < 3 or gray.height < 3:
        raise ImageTooSmall(f"need at least 3x3 pixels, got {gray.width}x{gray.height}")
    return gray.pixels[:, :, 0].astype(np.float64)


def laplacian_variance(img: ImageBuffer) -> float:
    """Population variance of the 3x3 Laplacian response over interior pixels."""
    resp = kernels.laplacian_response(_interior_gray(img))
    return float(np.var(resp))


def tenengrad(img: ImageBuffer) -> float:
    """Mean squared 3x3 Sobel gradient magnitude over interior pixels."""
    resp = kernels.sobel_sq_response(_interior_gray(img))
    return float(np.mean(resp))


def refine_selection(
    stream: CameraStreamDescriptor,
    chosen: int,
    radius: int = 2,
    base_dir: Path | None = None,
    absolute_floor: float = 0.0,
) -> tuple[int, QualityScore]:
    """Re-rank the frames within +-radius of the chosen index by Laplacian
    variance and return the sharpest one.

    Ties break toward the chosen frame, then toward earlier frames. Frames
    whose image file is absent are skipped. accepted is False only when the
    whole neighborhood scores below absolute_floor (0 disables the gate).
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if not 0 <= chosen < len(stream.frames):
        raise IndexError(f"chosen frame {chosen} out of range")

    scored: list[tuple[int, float, float]] = []
    for idx in range(max(0, chosen - radius), min(len(stream.frames), chosen + radius + 1)):
        frame_path = Path(stream.frames[idx].path)
        if base_dir is not None:
            frame_path = base_dir / frame_path
        try:
            img = load_pnm(frame_path)
        except MissingFile:
            continue
        scored.append((idx, laplacian_variance(img), tenengrad(img)))
    if not scored:
        raise MissingFile(
            f"no frame images found in [{chosen - radius}, {chosen + radius}] "
            f"for camera {stream.camera_id!r}"
        )

    def rank(entry):
        idx, lap, _ = entry
        # maximize variance; prefer the chosen frame, then earlier ones, on ties
        return (-lap, 0 if idx == chosen else 1, idx)

    best_idx, best_lap, best_ten = min(scored, key=rank)
    accepted = best_lap >= absolute_floor
    return best_idx, QualityScore(
        laplacian_variance=best_lap,
        tenengrad=best_ten,
        accepted=accepted,
        chosen_offset=best_idx - chosen,
    )
