"""Speech-triggered multi-camera calibration pipeline.

Turns a recorded calibration session (timestamped frames, operator audio,
word-timestamped transcript) into synchronized sharp calibration images and
estimates pinhole / double-sphere intrinsics plus multi-camera extrinsics by
minimizing reprojection error.
"""

__version__ = "0.1.0"
