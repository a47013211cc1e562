# Copyright (c) 2026 The acwm-lab Authors
# SPDX-License-Identifier: Apache-2.0
"""Action-conditioned video world models on a C++ core."""

from acwm_lab._core import (
    DomainError,
    IoError,
    NumericError,
    ShapeError,
    WorldModel,
    decode,
    encode,
    flow_time,
    generate_split,
    mmse,
    mse,
    parameter_count,
    psnr,
    psnr_from_mse,
    read_episode,
    run_cli,
    shift_time,
    ssim,
)

__all__ = [
    "DomainError",
    "IoError",
    "NumericError",
    "ShapeError",
    "WorldModel",
    "decode",
    "encode",
    "flow_time",
    "generate_split",
    "mmse",
    "mse",
    "parameter_count",
    "psnr",
    "psnr_from_mse",
    "read_episode",
    "run_cli",
    "shift_time",
    "ssim",
]
