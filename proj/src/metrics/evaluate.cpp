// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/metrics/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "acwm/core/error.hpp"
#include "acwm/metrics/metrics.hpp"
#include "json.hpp"

namespace acwm::metrics {

std::vector<float> shuffle_actions(std::span<const float> actions, int frames, int action_dim, std::uint64_t seed) {
  if (actions.size() != static_cast<std::size_t>(frames) * action_dim) {
    throw ShapeError("shuffle_actions: buffer does not hold " + std::to_string(frames) + " rows");
  }
  std::vector<int> order(static_cast<std::size_t>(frames));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin() + 1, order.end(), rng);
  std::vector<float> out(actions.size());
  for (int t = 0; t < frames; ++t) {
    std::copy_n(actions.data() + static_cast<std::size_t>(order[t]) * action_dim, action_dim,
                out.data() + static_cast<std::size_t>(t) * action_dim);
  }
  return out;
}

namespace {

void check_compatible(const model::ModelConfig& cfg, const flow::VideoSpec& video, const dataset::Manifest& m) {
  auto fail = [](const std::string& what) { throw DomainError("model/dataset mismatch: " + what); };
  if (m.latent_steps != cfg.latent_steps) fail("latent steps " + std::to_string(m.latent_steps) + " vs " + std::to_string(cfg.latent_steps));
  if (m.temporal_factor != cfg.temporal_factor) fail("temporal factor");
  if (m.action_dim != cfg.action_dim) fail("action dim " + std::to_string(m.action_dim) + " vs " + std::to_string(cfg.action_dim));
  if (m.height != video.height || m.width != video.width) fail("frame size");
  if (video.height / video.spatial_factor != cfg.latent_rows || video.width / video.spatial_factor != cfg.latent_cols) {
    fail("spatial factor does not map frames onto the model's latent grid");
  }
}

}  // namespace

MetricReport evaluate_model(const model::WorldModel<float>& model, const flow::VideoSpec& video,
                            const dataset::Manifest& manifest, const EvalOptions& options,
                            const std::string& checkpoint_id) {
  const auto& cfg = model.config();
  check_compatible(cfg, video, manifest);
  std::size_t count = manifest.entries.size();
  if (options.max_episodes > 0) count = std::min(count, static_cast<std::size_t>(options.max_episodes));

  MetricReport report;
  report.env = std::string(envs::to_string(manifest.env));
  report.split = std::string(dataset::to_string(manifest.split));
  report.checkpoint_id = checkpoint_id;
  report.sampler_steps = options.n_steps;
  report.action_mode = options.actions == ActionMode::true_actions ? "true" : "shuffled";
  report.episodes.resize(count);

  auto run_one = [&](std::size_t i) {
    const auto ep = dataset::read_episode(manifest.episode_path(i));
    std::vector<float> actions = ep.actions;
    if (options.actions == ActionMode::shuffled) {
      actions = shuffle_actions(ep.actions, ep.frame_count, ep.action_dim, options.shuffle_seed + i);
    }
    const auto pred = flow::predict_window(model, video, ep.frame(0), actions, options.n_steps, options.schedule,
                                           options.seed + i);
    const VideoRef g{ep.frames, ep.frame_count, ep.height, ep.width};
    const VideoRef p{pred, ep.frame_count, ep.height, ep.width};
    EpisodeMetrics e;
    e.episode = manifest.entries[i].file;
    e.mse = compute_mse(g, p, 1);
    e.mmse = compute_mmse(g, p, 1);
    e.ssim = compute_ssim(g, p, 1.0, 1);
    e.psnr = psnr_from_mse(e.mse);
    report.episodes[i] = e;
  };

  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(count)));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < count;) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  report.mean.episode = "mean";
  for (const auto& e : report.episodes) {
    report.mean.mse += e.mse;
    report.mean.mmse += e.mmse;
    report.mean.ssim += e.ssim;
    report.mean.psnr += e.psnr;
  }
  if (count > 0) {
    const double n = static_cast<double>(count);
    report.mean.mse /= n;
    report.mean.mmse /= n;
    report.mean.ssim /= n;
    report.mean.psnr /= n;
  }
  return report;
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << "episode,mse,mse_x1e3,mmse,mmse_x1e3,ssim,psnr\n" << std::setprecision(10);
  auto row = [&](const EpisodeMetrics& e) {
    out << e.episode << ',' << e.mse << ',' << e.mse * 1e3 << ',' << e.mmse << ',' << e.mmse * 1e3 << ',' << e.ssim
        << ',' << e.psnr << '\n';
  };
  for (const auto& e : report.episodes) row(e);
  row(report.mean);
}

void write_report_json(const MetricReport& report, const std::filesystem::path& path) {
  nlohmann::json j{{"env", report.env},
                   {"split", report.split},
                   {"checkpoint", report.checkpoint_id},
                   {"sampler_steps", report.sampler_steps},
                   {"actions", report.action_mode},
                   {"episodes", report.episodes.size()},
                   {"mean",
                    {{"mse", report.mean.mse},
                     {"mse_x1e3", report.mean.mse * 1e3},
                     {"mmse", report.mean.mmse},
                     {"mmse_x1e3", report.mean.mmse * 1e3},
                     {"ssim", report.mean.ssim},
                     {"psnr", report.mean.psnr}}}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace acwm::metrics
