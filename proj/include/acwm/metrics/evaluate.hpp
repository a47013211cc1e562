// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "acwm/dataset/dataset.hpp"
#include "acwm/flow/flow.hpp"
#include "acwm/model/world_model.hpp"

namespace acwm::metrics {

enum class ActionMode { true_actions, shuffled };

struct EvalOptions {
  int n_steps = 50;
  std::uint64_t seed = 0;  // sampler seed of episode i is seed + i
  ActionMode actions = ActionMode::true_actions;
  std::uint64_t shuffle_seed = 0x5eed;
  int max_episodes = 0;  // 0 evaluates every manifest entry
  int threads = 1;
  flow::FlowSchedule schedule;
};

struct EpisodeMetrics {
  std::string episode;
  double mse = 0.0;
  double mmse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct MetricReport {
  std::string env;
  std::string split;
  std::string checkpoint_id;
  int sampler_steps = 0;
  std::string action_mode = "true";
  std::vector<EpisodeMetrics> episodes;
  EpisodeMetrics mean;  // arithmetic mean of the per-episode values
};

/// Permutes action rows 1..frames-1 of one episode; row 0 (the null action)
/// stays in place.
std::vector<float> shuffle_actions(std::span<const float> actions, int frames, int action_dim, std::uint64_t seed);

/// Samples every episode from its first frame and scores predicted frames
/// 1..T_pix-1 (the context frame is excluded; the motion map of M-MSE uses the
/// full ground truth). Deterministic for fixed (model, data, options).
MetricReport evaluate_model(const model::WorldModel<float>& model, const flow::VideoSpec& video,
                            const dataset::Manifest& manifest, const EvalOptions& options,
                            const std::string& checkpoint_id = "");

/// One row per episode plus a final "mean" row; MSE and M-MSE both raw and x1e3.
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);
void write_report_json(const MetricReport& report, const std::filesystem::path& path);

}  // namespace acwm::metrics
