// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace acwm::cli {

/// Bad flags, missing inputs or contradictory settings; exits with status 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the default output root ("runs" if unset).
inline constexpr const char* kOutputRootEnv = "ACWM_OUTPUT_ROOT";

/// Fully resolved settings of one invocation; written as config.json into
/// every output directory.
struct RunConfig {
  std::string subcommand;
  std::string env = "reacher";
  std::string split;  // empty: train for gen/train, ind_test otherwise
  int episodes = 64;
  double data_fraction = 1.0;
  std::int64_t data_seed = -1;  // < 0: the split's default base seed
  int height = 32;
  int width = 32;
  int latent_steps = 9;
  int spatial_factor = 2;
  int temporal_factor = 4;

  std::string preset = "tiny";
  int hidden = 0;  // 0 keeps the preset value
  int layers = -1;
  int heads = 0;
  int patch = 0;
  std::string conditioning;  // empty keeps the preset (adaln)
  std::uint64_t seed = 0;
  int train_steps = 2000;
  int batch = 4;
  double lr = 1e-4;
  double clip_norm = 1.0;
  int warmup_steps = 0;
  int log_every = 10;
  int save_every = 0;

  int sampler_steps = 50;
  std::vector<int> sweep_steps{1, 2, 5, 10, 20, 50};
  double shift = 5.0;
  std::string actions = "true";
  int max_episodes = 0;
  int threads = 1;
  int episode_index = 0;
  int windows = 1;

  std::string data_dir;
  std::string checkpoint;
  std::string sweep_dir;
  std::string train_dir;
  std::string output_dir;
};

nlohmann::json to_json(const RunConfig& config);
/// Overlays the keys of `j` onto `base`; unknown keys are a UsageError.
RunConfig from_json(const nlohmann::json& j, RunConfig base = {});

/// Output root: $ACWM_OUTPUT_ROOT or "runs".
std::filesystem::path output_root();

/// Entry point shared by the acwm binary and the tests. `args` excludes the
/// program name. Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Binary PPM (P6) of an H x W x 3 float image in [0, 1].
void write_ppm(const std::filesystem::path& path, const std::vector<float>& rgb, int height, int width);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart.
void write_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series, bool log_x = false);

}  // namespace acwm::cli
