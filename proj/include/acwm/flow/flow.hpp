// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Flow matching on the linear path z_tau = (1 - tau) z0 + tau z1, with z0 ~ N(0, I)
// and z1 the data latent; tau runs from noise (0) to data (1). Noise-level
// indices count down with tau: level = round((1 - tau)(levels - 1)), so clean
// context steps sit at level 0.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "acwm/codec/codec.hpp"
#include "acwm/core/tensor.hpp"
#include "acwm/model/world_model.hpp"

namespace acwm::flow {

/// Where the Gaussian envelope over levels enters training.
enum class EnvelopeMode { loss_weight, sampling_density };

struct FlowSchedule {
  int levels = 1000;
  double shift = 5.0;
  double envelope_center = 500.0;
  double envelope_width = 250.0;
  int inference_steps = 50;
  EnvelopeMode envelope_mode = EnvelopeMode::loss_weight;

  static double alpha(double tau) { return 1.0 - tau; }
  static double beta(double tau) { return tau; }
  int level_of(double tau) const;
  void validate() const;
};

/// tau = s u / (1 + (s - 1) u). Throws DomainError for u outside [0, 1] or s <= 0.
double shift_time(double u, double s);

/// Flow time for a uniform draw u, shifted toward the noise end:
/// 1 - shift_time(1 - u, s). Used by training and the sampler, so s > 1 spends
/// more of both near tau = 0.
double flow_time(double u, double s);

/// exp(-(level - center)^2 / (2 width^2)).
double loss_weight(int level, const FlowSchedule& schedule);

template <class T>
struct Interpolation {
  std::vector<T> z_tau;
  std::vector<T> target;  // z1 - z0
};

template <class T>
Interpolation<T> interpolate(std::span<const T> z0, std::span<const T> z1, double tau);

/// Extents of a batch of latent videos, (batch, steps, rows, cols, channels).
struct LatentShape {
  int batch = 1;
  int steps = 1;
  int rows = 1;
  int cols = 1;
  int channels = 1;

  std::size_t step_size() const { return static_cast<std::size_t>(rows) * cols * channels; }
  std::size_t sample_size() const { return step_size() * steps; }
  std::size_t total() const { return sample_size() * batch; }
  Shape shape() const { return {batch, steps, rows, cols, channels}; }
};

/// Velocity model: (z_tau, per-(sample, step) levels, actions) -> velocity.
template <class T>
using Predictor = std::function<Tensor<T>(const Tensor<T>& z_tau, std::span<const int> levels, const Tensor<T>& actions)>;

template <class T>
Predictor<T> model_predictor(const model::WorldModel<T>& model, const model::Binding<T>& binding);

template <class T>
struct LossBatch {
  LatentShape shape;
  std::vector<T> data;     // z1, shape.total() values
  Shape action_shape;      // (batch, L, d_a)
  std::vector<T> actions;
};

/// Random draws behind one loss evaluation, for inspection.
template <class T>
struct LossDraw {
  std::vector<double> tau;      // per sample
  std::vector<int> levels;      // per (sample, step)
  std::vector<double> weights;  // per sample
  std::vector<T> noise;         // z0
};

/// Envelope-weighted masked squared velocity residual averaged over the batch.
/// The first `context_steps` steps of every sample are clean, held at level 0
/// and excluded from the loss. `noise`, when given, replaces the z0 draw.
/// Throws NumericError if the loss is not finite.
template <class T>
Tensor<T> training_loss(const Predictor<T>& predictor, const LossBatch<T>& batch, const FlowSchedule& schedule,
                        std::mt19937_64& rng, int context_steps = 1, LossDraw<T>* draw = nullptr,
                        const std::vector<T>* noise = nullptr);

/// Velocity field for the sampler: (z, tau, levels) -> dz/dtau, all batch-flat.
template <class T>
using VelocityField = std::function<std::vector<T>(const std::vector<T>& z, double tau, std::span<const int> levels)>;

/// Euler integration from tau = 0 to 1 over n_steps uniform-in-u steps mapped
/// through flow_time. `z` is the initial noise; the first context_steps steps
/// of each sample are overwritten from `clean` before and after every step.
template <class T>
std::vector<T> euler_sample(const VelocityField<T>& field, const LatentShape& shape, std::vector<T> z,
                            std::span<const T> clean, int context_steps, int n_steps, const FlowSchedule& schedule);

/// Model-driven sampling with seeded Gaussian noise (one stream per sample).
template <class T>
std::vector<T> sample(const model::WorldModel<T>& model, const LatentShape& shape, std::span<const T> clean,
                      std::span<const T> actions, int n_steps, const FlowSchedule& schedule, std::uint64_t seed,
                      int context_steps = 1);

/// Pixel-space settings shared by window prediction and rollout.
struct VideoSpec {
  int height = 32;
  int width = 32;
  int spatial_factor = 2;
  codec::Normalizer normalizer;
};

/// One window: encode the context frame, sample, decode, clamp to [0, 1].
/// actions: T_pix x d_a. Returns T_pix frames.
std::vector<float> predict_window(const model::WorldModel<float>& model, const VideoSpec& video,
                                  std::span<const float> first_frame, std::span<const float> actions, int n_steps,
                                  const FlowSchedule& schedule, std::uint64_t seed);

/// Chains `windows` predictions, each conditioned on the previous window's
/// last decoded frame. actions holds at least windows (T_pix - 1) + 1 rows;
/// the first action of every window is replaced by the null action.
/// Returns windows (T_pix - 1) + 1 frames.
std::vector<float> rollout_autoregressive(const model::WorldModel<float>& model, const VideoSpec& video,
                                          std::span<const float> first_frame, std::span<const float> actions,
                                          int windows, int n_steps, const FlowSchedule& schedule, std::uint64_t seed);

}  // namespace acwm::flow
