// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Action-conditioned diffusion transformer over patchified latent video.
//
// Tensor layouts used throughout:
//   latent        (B, T_l, rows, cols, C)
//   actions       (B, L, d_a) with L = 1 + r (T_l - 1)
//   conditioning  (B, T_l, d)
//   hidden tokens (B, T_l, S, d), S = (rows / p) (cols / p)

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "acwm/core/ops.hpp"
#include "acwm/core/tensor.hpp"
#include "acwm/model/config.hpp"

namespace acwm::model {

/// Named parameter storage, in a fixed registration order.
template <class T>
struct ParameterSet {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<T> values;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, std::size_t> index;

  void add(std::string name, Shape shape, std::vector<T> values);
  std::size_t position(const std::string& name) const;
  Entry& at(const std::string& name) { return entries[position(name)]; }
  const Entry& at(const std::string& name) const { return entries[position(name)]; }
  /// Total number of scalars.
  std::size_t scalar_count() const;
};

/// Graph leaves for one forward pass. Values are copied from the set, so the
/// set may be updated while a binding is alive.
template <class T>
class Binding {
 public:
  Binding(const ParameterSet<T>& set, bool requires_grad);
  const Tensor<T>& operator()(const std::string& name) const;
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }
  std::size_t size() const { return tensors_.size(); }

 private:
  const ParameterSet<T>* set_;
  std::vector<Tensor<T>> tensors_;
};

/// Per-block (gamma, beta, alpha) for the spatial attention, temporal
/// attention and MLP sublayers; each tensor is (B, T_l, d).
template <class T>
struct Modulation {
  std::array<Tensor<T>, 3> gamma;
  std::array<Tensor<T>, 3> beta;
  std::array<Tensor<T>, 3> alpha;
};

/// Names and shapes of every parameter for a config, in registration order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

/// Parameter count implied by a config without allocating it.
std::size_t parameter_count(const ModelConfig& config);

/// Sinusoidal features of a noise-level index: [sin(level w_i) | cos(level w_i)]
/// with w_i = exp(-ln(10000) i / (dim / 2)).
std::vector<double> timestep_features(int level, int dim);

template <class T>
class WorldModel {
 public:
  /// Seeded initialization: alpha rows, the cross-attention output projection
  /// and the prediction head start at zero.
  explicit WorldModel(const ModelConfig& config);
  /// Adopts existing parameters; names and shapes must match the config.
  WorldModel(const ModelConfig& config, ParameterSet<T> parameters);

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  Binding<T> bind(bool requires_grad) const { return Binding<T>(params_, requires_grad); }

  /// (B, L, d_a) -> (B, T_l, d): per-action MLP then a stride-r conv.
  Tensor<T> embed_actions(const Binding<T>& p, const Tensor<T>& actions) const;
  /// levels holds B * T_l indices in [0, noise_levels) -> (B, T_l, d).
  Tensor<T> embed_timestep(const Binding<T>& p, std::span<const int> levels, std::int64_t batch) const;
  /// c = c_t + a_hat in adaln mode, c_t alone in cross-attention mode.
  Tensor<T> conditioning(const Binding<T>& p, std::span<const int> levels, const Tensor<T>& actions) const;
  Modulation<T> adaln_modulation(const Binding<T>& p, const Tensor<T>& c, int block) const;

  /// One DiT block on x (B, T_l, S, d) laid out on a grid_rows x grid_cols
  /// token grid. action_tokens (B, T_l, d) enables the cross-attention
  /// sublayer and may be left undefined.
  Tensor<T> block_forward(const Binding<T>& p, const Tensor<T>& x, const Tensor<T>& c, int block,
                          const Tensor<T>& action_tokens, int grid_rows, int grid_cols) const;

  /// Velocity prediction with AdaLN conditioning only. In cross-attention
  /// mode this is the trunk with the cross-attention sublayers removed.
  Tensor<T> dit_forward(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c) const;
  /// Velocity prediction with action tokens injected by cross-attention.
  Tensor<T> cross_attn_forward(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c,
                               const Tensor<T>& action_tokens) const;

  /// Full pipeline: levels and pixel-rate actions to velocity.
  Tensor<T> predict(const Binding<T>& p, const Tensor<T>& latent, std::span<const int> levels,
                    const Tensor<T>& actions) const;

 private:
  Tensor<T> trunk(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c,
                  const Tensor<T>& action_tokens) const;
  Tensor<T> self_attention(const Binding<T>& p, const std::string& prefix, const Tensor<T>& h,
                           const AttentionRope& rope) const;
  void check_latent(const Tensor<T>& latent) const;
  void check_conditioning(const Tensor<T>& c, std::int64_t batch, std::int64_t steps, const char* what) const;

  ModelConfig config_;
  ParameterSet<T> params_;
};

extern template class WorldModel<float>;
extern template class WorldModel<double>;

}  // namespace acwm::model
