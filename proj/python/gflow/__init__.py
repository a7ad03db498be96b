"""Dynamic scene reconstruction with Gaussian splats."""

from ._gflow import (
    GflowError,
    config_defaults,
    load_checkpoint,
    pose_errors,
    psnr,
    reconstruct,
    render,
    segment,
    ssim,
    synth,
    tracks,
)

__all__ = [
    "GflowError",
    "config_defaults",
    "load_checkpoint",
    "pose_errors",
    "psnr",
    "reconstruct",
    "render",
    "segment",
    "ssim",
    "synth",
    "tracks",
]
