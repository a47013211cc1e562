// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Exactly invertible pixel-shuffle latent codec. Temporal factor r groups r
// consecutive frames into one latent step (step 0 holds frame 0 alone, its
// other r-1 slots zero); spatial factor f stacks f x f pixel blocks into
// channels. Channel index = ((slot * f + dy) * f + dx) * 3 + rgb.

#pragma once

#include <array>
#include <span>
#include <vector>

#include "acwm/core/error.hpp"

namespace acwm::codec {

struct LatentVideo {
  int steps = 0;  // T_l
  int rows = 0;   // H / f
  int cols = 0;   // W / f
  int channels = 0;
  int spatial_factor = 1;
  int temporal_factor = 1;
  std::vector<float> tokens;  // steps x rows x cols x channels
  std::vector<float> sigma;   // per-step noise level; context steps carry 0

  std::size_t step_size() const { return static_cast<std::size_t>(rows) * cols * channels; }
  std::span<float> step(int t) { return std::span<float>(tokens).subspan(t * step_size(), step_size()); }
  std::span<const float> step(int t) const { return std::span<const float>(tokens).subspan(t * step_size(), step_size()); }
};

/// Latent steps produced from `frames` pixel frames: 1 + (frames - 1) / r.
int latent_steps_for(int frames, int temporal_factor);

/// frames: T_pix x H x W x 3 with T_pix = 1 + r (T_l - 1) and f | H, f | W.
LatentVideo encode(std::span<const float> frames, int frame_count, int height, int width, int spatial_factor,
                   int temporal_factor);

/// Inverse of encode: returns T_pix x H x W x 3.
std::vector<float> decode(const LatentVideo& latent);

/// Per-RGB-channel affine map to roughly zero mean / unit variance. Unused
/// slots of step 0 stay at zero in both directions.
struct Normalizer {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};

  void normalize(LatentVideo& latent) const;
  void denormalize(LatentVideo& latent) const;
};

}  // namespace acwm::codec
