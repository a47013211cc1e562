// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acwm/core/error.hpp"
#include "acwm/envs/env.hpp"

namespace acwm::dataset {

enum class Split { train, ind_test, ood_test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

/// Pixel-rate length for a latent length: 1 + r (T_l - 1).
inline int pixel_frames(int latent_steps, int temporal_factor) { return 1 + temporal_factor * (latent_steps - 1); }

/// Everything needed to generate one split of one environment.
struct SplitSpec {
  envs::ScenarioSpec scenario;
  Split split = Split::train;
  int episode_count = 64;
  std::uint64_t base_seed = 0;
  double data_fraction = 1.0;  // generate the first ceil(fraction * count) seeds
  int latent_steps = 9;
  int temporal_factor = 4;
  int height = 32;
  int width = 32;

  int frames() const { return pixel_frames(latent_steps, temporal_factor); }
  /// Episodes actually generated: a prefix of the seed sequence.
  int effective_count() const;
};

/// InD/OoD parameter ranges per environment:
///   push_rope: train length in [2.0, 2.8], OoD fixed 3.1
///   push_sand: train L in [12, 17], OoD L = 24
///   push_cube: train 3 cubes, OoD 1, 4 or 5 cubes
///   reacher:   train goals outside the corner sectors (torque [-3.3, 3.5]),
///              OoD goals inside them (torque [-3.7, 4.2])
SplitSpec default_split(envs::EnvKind kind, Split split, int episode_count = 64);

/// Throws DomainError when an OoD scenario overlaps the training ranges.
void check_disjoint(const envs::ScenarioSpec& train, const envs::ScenarioSpec& ood);

/// Short description of the controlled shift ("rope_length=3.1", ...).
std::string ood_label(const envs::ScenarioSpec& spec, const envs::EnvParams& params);

struct Episode {
  envs::EnvKind env = envs::EnvKind::reacher;
  Split split = Split::train;
  std::uint64_t seed = 0;
  envs::EnvParams params;
  std::string ood_label;
  int frame_count = 0;
  int height = 0;
  int width = 0;
  int action_dim = 0;
  std::vector<float> frames;   // frame_count x height x width x 3
  std::vector<float> actions;  // frame_count x action_dim; row 0 is the null action

  std::span<const float> frame(int t) const {
    const std::size_t n = static_cast<std::size_t>(height) * width * 3;
    return std::span<const float>(frames).subspan(static_cast<std::size_t>(t) * n, n);
  }
  bool operator==(const Episode&) const = default;
};

/// Simulates and renders one episode of the split (seed = base_seed + index).
Episode make_episode(const SplitSpec& spec, int index);

/// Forces the pixel-rate length to 1 + r (T_l - 1): extra frames are trimmed
/// from the tail; missing frames repeat the last frame with zero actions.
void pad_trim(std::vector<float>& frames, std::vector<float>& actions, int frame_size, int action_dim,
              int latent_steps, int temporal_factor);

// ---------------------------------------------------------------------------
// Episode files: "ACWMEP01", u64 LE header length, JSON header, then frames
// and actions as little-endian float32, row-major.

inline constexpr std::string_view kEpisodeMagic = "ACWMEP01";

class EpisodeFormatError : public IoError {
 public:
  enum class Kind { io, bad_magic, bad_header, truncated, checksum_mismatch, shape_mismatch, dtype_mismatch };
  EpisodeFormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// FNV-1a 64 over the little-endian float32 payload.
std::uint64_t payload_checksum(std::span<const float> frames, std::span<const float> actions);

std::uint64_t write_episode(const Episode& episode, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string file;  // relative to the manifest directory
  std::uint64_t seed = 0;
  envs::EnvParams params;
  std::string ood_label;
  std::uint64_t checksum = 0;
};

/// Per-RGB-channel statistics of a split's frames.
struct ChannelStats {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
};

struct Manifest {
  envs::EnvKind env = envs::EnvKind::reacher;
  Split split = Split::train;
  std::uint64_t base_seed = 0;
  double data_fraction = 1.0;
  int latent_steps = 9;
  int temporal_factor = 4;
  int height = 32;
  int width = 32;
  int action_dim = 2;
  ChannelStats stats;
  std::vector<ManifestEntry> entries;
  std::uint64_t content_checksum = 0;
  std::filesystem::path directory;  // where the manifest lives (not serialized)

  std::filesystem::path episode_path(std::size_t i) const { return directory / entries.at(i).file; }
};

inline constexpr std::string_view kManifestName = "manifest.json";

/// Generates the split into `dir` and writes `dir/manifest.json` last.
Manifest generate_split(const SplitSpec& spec, const std::filesystem::path& dir);

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace acwm::dataset
