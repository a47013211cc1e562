// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/flow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "acwm/core/error.hpp"
#include "json.hpp"

namespace acwm::flow {

template <class T>
AdamW<T>::AdamW(const AdamWConfig& config, std::vector<std::size_t> sizes) : config_(config) {
  if (!(config.lr > 0.0)) throw DomainError("learning rate must be positive");
  for (auto n : sizes) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
}

template <class T>
double AdamW<T>::step(std::vector<std::span<T>> params, const std::vector<std::vector<T>>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("AdamW: tensor count mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != m_[i].size() || params[i].size() != m_[i].size()) {
      throw ShapeError("AdamW: tensor " + std::to_string(i) + " changed size");
    }
    for (const T g : grads[i]) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
  ++t_;
  double lr = config_.lr;
  if (config_.warmup_steps > 0 && t_ <= config_.warmup_steps) lr *= static_cast<double>(t_) / config_.warmup_steps;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = clip * static_cast<double>(grads[i][j]);
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      double p = static_cast<double>(params[i][j]);
      p -= lr * config_.weight_decay * p;
      p -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
      params[i][j] = static_cast<T>(p);
    }
  }
  return norm;
}

template <class T>
double AdamW<T>::step(model::ParameterSet<T>& params, const model::Binding<T>& binding) {
  std::vector<std::span<T>> p;
  std::vector<std::vector<T>> g;
  p.reserve(params.entries.size());
  g.reserve(params.entries.size());
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    p.emplace_back(params.entries[i].values);
    g.push_back(binding.at(i).grad());
  }
  return step(std::move(p), g);
}

template class AdamW<float>;
template class AdamW<double>;

codec::Normalizer normalizer_from(const dataset::ChannelStats& stats) {
  codec::Normalizer n;
  n.mean = stats.mean;
  n.stddev = stats.stddev;
  return n;
}

TrainingSet load_training_set(const dataset::Manifest& manifest, int spatial_factor, const codec::Normalizer& norm) {
  if (manifest.entries.empty()) throw DomainError("training manifest lists no episodes");
  TrainingSet set;
  const int frames = dataset::pixel_frames(manifest.latent_steps, manifest.temporal_factor);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto ep = dataset::read_episode(manifest.episode_path(i));
    if (ep.frame_count != frames || ep.height != manifest.height || ep.width != manifest.width) {
      throw ShapeError("episode '" + manifest.entries[i].file + "' does not match the manifest shape");
    }
    auto z = codec::encode(ep.frames, ep.frame_count, ep.height, ep.width, spatial_factor, manifest.temporal_factor);
    norm.normalize(z);
    if (i == 0) {
      set.sample_shape = LatentShape{1, z.steps, z.rows, z.cols, z.channels};
      set.action_shape = {1, ep.frame_count, ep.action_dim};
    }
    set.latents.push_back(std::move(z.tokens));
    set.actions.push_back(ep.actions);
  }
  return set;
}

LossBatch<float> make_batch(const TrainingSet& data, std::span<const std::size_t> indices) {
  LossBatch<float> b;
  b.shape = data.sample_shape;
  b.shape.batch = static_cast<int>(indices.size());
  b.action_shape = data.action_shape;
  b.action_shape[0] = static_cast<std::int64_t>(indices.size());
  b.data.reserve(b.shape.total());
  for (auto i : indices) {
    const auto& z = data.latents.at(i);
    const auto& a = data.actions.at(i);
    b.data.insert(b.data.end(), z.begin(), z.end());
    b.actions.insert(b.actions.end(), a.begin(), a.end());
  }
  return b;
}

std::vector<TrainLogEntry> train(model::WorldModel<float>& model, const TrainingSet& data, const TrainConfig& config,
                                 std::ostream* log, const std::function<void(const TrainLogEntry&)>& on_step) {
  if (data.size() == 0) throw DomainError("training set is empty");
  if (config.batch < 1 || config.steps < 0) throw DomainError("batch must be positive and steps non-negative");
  std::vector<std::size_t> sizes;
  for (const auto& e : model.parameters().entries) sizes.push_back(e.values.size());
  AdamW<float> opt(config.optim, sizes);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<TrainLogEntry> entries;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx(static_cast<std::size_t>(config.batch));
  for (int s = 1; s <= config.steps; ++s) {
    for (auto& i : idx) i = pick(rng);
    const auto batch = make_batch(data, idx);
    const auto binding = model.bind(true);
    auto loss = training_loss<float>(model_predictor(model, binding), batch, config.schedule, rng,
                                     config.context_steps);
    loss.backward();
    TrainLogEntry e;
    e.step = s;
    e.loss = loss.item();
    e.grad_norm = opt.step(model.parameters(), binding);
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_step) on_step(e);
    if ((config.log_every > 0 && s % config.log_every == 0) || s == config.steps) {
      entries.push_back(e);
      if (log) {
        *log << nlohmann::json{{"step", e.step}, {"loss", e.loss}, {"grad_norm", e.grad_norm},
                               {"wall_time", e.wall_seconds}}
                    .dump()
             << '\n'
             << std::flush;
      }
    }
  }
  return entries;
}

}  // namespace acwm::flow
