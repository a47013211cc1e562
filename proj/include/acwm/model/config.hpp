// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace acwm::model {

enum class Conditioning { adaln, cross_attention };

std::string_view to_string(Conditioning c);
Conditioning parse_conditioning(std::string_view name);

struct ModelConfig {
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int patch = 2;
  int mlp_ratio = 4;
  int action_dim = 2;
  int latent_steps = 9;     // T_l
  int temporal_factor = 4;  // r: pixel frames per latent step
  int latent_rows = 16;     // H / f
  int latent_cols = 16;     // W / f
  int latent_channels = 48; // 3 f^2 r
  int frequency_dim = 256;  // sinusoidal timestep features
  int noise_levels = 1000;
  double rope_base = 10000.0;
  Conditioning conditioning = Conditioning::adaln;
  std::uint64_t seed = 0;

  /// Desk default: d=64, 2 layers, 4 heads on 32x32 frames with f=2, r=4, T_l=9.
  static ModelConfig tiny();
  /// DiT-S: d=768, 10 layers, 12 heads.
  static ModelConfig dit_s();
  static ModelConfig preset(std::string_view name);

  int head_dim() const { return hidden / heads; }
  int grid_rows() const { return latent_rows / patch; }
  int grid_cols() const { return latent_cols / patch; }
  int tokens_per_step() const { return grid_rows() * grid_cols(); }
  int patch_features() const { return patch * patch * latent_channels; }
  int action_frames() const { return 1 + temporal_factor * (latent_steps - 1); }

  /// Throws DomainError/ShapeError naming the violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

}  // namespace acwm::model
