// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Pixel metrics on RGB videos laid out frames x height x width x 3, values in [0, 1].

#pragma once

#include <span>
#include <vector>

namespace acwm::metrics {

struct VideoRef {
  std::span<const float> data;
  int frames = 0;
  int height = 0;
  int width = 0;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
};

inline constexpr double kPsnrCap = 120.0;
inline constexpr double kPsnrCapMse = 1e-12;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean squared error over every (t, h, w, c), from `first_frame` on.
double compute_mse(const VideoRef& gt, const VideoRef& pred, int first_frame = 0);

/// 10 log10(max^2 / mse), capped at 120 dB when mse < 1e-12.
double psnr_from_mse(double mse, double max_value = 1.0);
double compute_psnr(const VideoRef& gt, const VideoRef& pred, double max_value = 1.0, int first_frame = 0);

/// Mean SSIM of one grayscale frame pair over the valid 11x11 Gaussian windows.
double ssim_gray(std::span<const double> a, std::span<const double> b, int height, int width,
                 double max_value = 1.0);
/// Per-frame SSIM on channel-mean grayscale, averaged over frames.
double compute_ssim(const VideoRef& gt, const VideoRef& pred, double max_value = 1.0, int first_frame = 0);

/// m[h, w] = max over t, c of |gt_t - gt_0|; w = 0.01 + m.
struct MotionWeightMap {
  int height = 0;
  int width = 0;
  std::vector<double> motion;
  std::vector<double> weight;
};

MotionWeightMap motion_weights(const VideoRef& gt);

/// sum w (pred - gt)^2 / sum w over (t >= first_frame, c, h, w). The motion
/// map always uses the whole ground truth. Throws for fewer than 2 frames.
double compute_mmse(const VideoRef& gt, const VideoRef& pred, int first_frame = 0);

}  // namespace acwm::metrics
