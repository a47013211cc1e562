// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/model/config.hpp"

#include "acwm/core/error.hpp"

namespace acwm::model {

std::string_view to_string(Conditioning c) {
  return c == Conditioning::adaln ? "adaln" : "cross_attention";
}

Conditioning parse_conditioning(std::string_view name) {
  if (name == "adaln") return Conditioning::adaln;
  if (name == "cross_attention" || name == "cross") return Conditioning::cross_attention;
  throw DomainError("unknown conditioning mode '" + std::string(name) + "'");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::dit_s() {
  ModelConfig c;
  c.hidden = 768;
  c.layers = 10;
  c.heads = 12;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "tiny") return tiny();
  if (name == "dit-s" || name == "DiT-S" || name == "dit_s") return dit_s();
  throw DomainError("unknown model preset '" + std::string(name) + "' (expected tiny or dit-s)");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw DomainError("invalid model config: " + what);
  };
  need(hidden > 0 && layers >= 0 && heads > 0, "hidden, layers and heads must be positive");
  need(hidden % heads == 0, "hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
  need(head_dim() % 4 == 0, "head dim " + std::to_string(head_dim()) + " must be divisible by 4 for 2D rope");
  need(patch > 0 && latent_rows % patch == 0 && latent_cols % patch == 0, "latent grid not divisible by patch");
  need(latent_steps >= 1 && temporal_factor >= 1, "latent steps and temporal factor must be positive");
  need(latent_channels > 0 && action_dim > 0 && mlp_ratio > 0, "channels, action dim and mlp ratio must be positive");
  need(frequency_dim > 0 && frequency_dim % 2 == 0, "frequency dim must be even");
  need(noise_levels > 1, "at least two noise levels");
}

}  // namespace acwm::model
