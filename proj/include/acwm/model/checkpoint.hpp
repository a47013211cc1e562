// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout:
//   "ACWMCK01" | u64 LE header length | JSON header | tensors
// Each tensor: u32 name length, name bytes, u32 rank, rank x u64 extents,
// then numel float32 LE values, in the header's declared order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "acwm/codec/codec.hpp"
#include "acwm/model/config.hpp"
#include "acwm/model/world_model.hpp"

namespace acwm::model {

inline constexpr std::string_view kCheckpointMagic = "ACWMCK01";

/// Data-side settings a checkpoint must agree with at evaluation time.
struct CheckpointMeta {
  std::string env = "reacher";
  int frame_height = 32;
  int frame_width = 32;
  int spatial_factor = 2;
  codec::Normalizer normalizer;
  std::int64_t step = 0;
  double final_loss = 0.0;
};

struct Checkpoint {
  ModelConfig config;
  CheckpointMeta meta;
  ParameterSet<float> parameters;
  std::string id;  // FNV-1a of the tensor section, hex
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParameterSet<float>& params,
                     const CheckpointMeta& meta);
/// Throws IoError on malformed or truncated files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace acwm::model
