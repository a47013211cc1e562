// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "acwm/codec/codec.hpp"
#include "acwm/dataset/dataset.hpp"
#include "acwm/flow/flow.hpp"
#include "acwm/model/world_model.hpp"

namespace acwm::flow {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
  int warmup_steps = 0;    // linear learning-rate warmup
};

/// Adaptive-moment optimizer with decoupled weight decay and global-norm
/// clipping over all tensors of one update.
template <class T>
class AdamW {
 public:
  AdamW(const AdamWConfig& config, std::vector<std::size_t> sizes);
  /// Updates params in place; returns the gradient norm before clipping.
  double step(std::vector<std::span<T>> params, const std::vector<std::vector<T>>& grads);
  /// Convenience for a model's parameter set and the binding it was built from.
  double step(model::ParameterSet<T>& params, const model::Binding<T>& binding);
  std::int64_t steps_taken() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Normalized latent videos and pixel-rate actions held in memory.
struct TrainingSet {
  LatentShape sample_shape;  // batch = 1
  Shape action_shape;        // (1, L, d_a)
  std::vector<std::vector<float>> latents;
  std::vector<std::vector<float>> actions;

  std::size_t size() const { return latents.size(); }
};

/// Reads, encodes and normalizes every episode of a manifest.
TrainingSet load_training_set(const dataset::Manifest& manifest, int spatial_factor, const codec::Normalizer& norm);

codec::Normalizer normalizer_from(const dataset::ChannelStats& stats);

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

struct TrainConfig {
  int steps = 2000;
  int batch = 4;
  std::uint64_t seed = 0;
  int context_steps = 1;
  int log_every = 10;
  AdamWConfig optim;
  FlowSchedule schedule;
};

/// Single-threaded training loop. Every log_every steps (and on the last step)
/// an entry is recorded and, if `log` is set, appended as one JSON line.
/// `on_step` runs after every update.
std::vector<TrainLogEntry> train(model::WorldModel<float>& model, const TrainingSet& data, const TrainConfig& config,
                                 std::ostream* log = nullptr,
                                 const std::function<void(const TrainLogEntry&)>& on_step = {});

/// Assembles a batch from the given sample indices.
LossBatch<float> make_batch(const TrainingSet& data, std::span<const std::size_t> indices);

}  // namespace acwm::flow
