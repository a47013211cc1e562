// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "acwm/model/world_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "acwm/core/error.hpp"

namespace acwm::model {

// ---------------------------------------------------------------------------
// Parameter storage

template <class T>
void ParameterSet<T>::add(std::string name, Shape shape, std::vector<T> values) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("parameter '" + name + "' has " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  if (index.count(name)) throw DomainError("duplicate parameter '" + name + "'");
  index.emplace(name, entries.size());
  entries.push_back({std::move(name), std::move(shape), std::move(values)});
}

template <class T>
std::size_t ParameterSet<T>::position(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw DomainError("no parameter named '" + name + "'");
  return it->second;
}

template <class T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.values.size();
  return n;
}

template <class T>
Binding<T>::Binding(const ParameterSet<T>& set, bool requires_grad) : set_(&set) {
  tensors_.reserve(set.entries.size());
  for (const auto& e : set.entries) {
    tensors_.push_back(requires_grad ? Tensor<T>::parameter(e.shape, e.values) : Tensor<T>::constant(e.shape, e.values));
  }
}

template <class T>
const Tensor<T>& Binding<T>::operator()(const std::string& name) const {
  return tensors_[set_->position(name)];
}

// ---------------------------------------------------------------------------
// Layout and initialization

namespace {

constexpr int kModulatedSublayers = 3;
constexpr int kConvKernel = 3;
constexpr double kModulationInitStd = 0.02;

void add_linear(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::int64_t in,
                std::int64_t width) {
  out.emplace_back(name + ".w", Shape{in, width});
  out.emplace_back(name + ".b", Shape{width});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

template <class T>
std::vector<T> init_values(const std::string& name, const Shape& shape, std::int64_t hidden, std::mt19937_64& rng) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)), T(0));
  if (ends_with(name, ".b") || name == "head.w" || ends_with(name, "cross.out.w")) return v;
  std::normal_distribution<double> normal(0.0, 1.0);
  if (ends_with(name, ".mod.w")) {
    const std::int64_t width = shape[1];
    const bool gated = starts_with(name, "blocks.");
    for (std::int64_t i = 0; i < shape[0]; ++i)
      for (std::int64_t j = 0; j < width; ++j) {
        const double z = normal(rng);
        const bool alpha = gated && (j / hidden) % 3 == 2;
        v[static_cast<std::size_t>(i * width + j)] = alpha ? T(0) : static_cast<T>(kModulationInitStd * z);
      }
    return v;
  }
  const double fan_in = shape.size() == 3 ? static_cast<double>(shape[1] * shape[2]) : static_cast<double>(shape[0]);
  const double stddev = 1.0 / std::sqrt(fan_in);
  for (auto& x : v) x = static_cast<T>(stddev * normal(rng));
  return v;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.hidden;
  std::vector<std::pair<std::string, Shape>> out;
  add_linear(out, "patch", cfg.patch_features(), d);
  add_linear(out, "time.fc1", cfg.frequency_dim, d);
  add_linear(out, "time.fc2", d, d);
  add_linear(out, "action.fc1", cfg.action_dim, d);
  add_linear(out, "action.fc2", d, d);
  out.emplace_back("action.conv.w", Shape{d, d, kConvKernel});
  out.emplace_back("action.conv.b", Shape{d});
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    add_linear(out, p + "mod", d, 3 * kModulatedSublayers * d);
    add_linear(out, p + "spatial.qkv", d, 3 * d);
    add_linear(out, p + "spatial.out", d, d);
    if (cfg.conditioning == Conditioning::cross_attention) {
      add_linear(out, p + "cross.q", d, d);
      add_linear(out, p + "cross.kv", d, 2 * d);
      add_linear(out, p + "cross.out", d, d);
    }
    add_linear(out, p + "temporal.qkv", d, 3 * d);
    add_linear(out, p + "temporal.out", d, d);
    add_linear(out, p + "mlp.fc1", d, cfg.mlp_ratio * d);
    add_linear(out, p + "mlp.fc2", cfg.mlp_ratio * d, d);
  }
  add_linear(out, "final.mod", d, 2 * d);
  add_linear(out, "head", d, cfg.patch_features());
  return out;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_layout(config)) n += static_cast<std::size_t>(numel(shape));
  return n;
}

std::vector<double> timestep_features(int level, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw DomainError("timestep feature dim must be positive and even");
  const int half = dim / 2;
  std::vector<double> f(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * i / half);
    f[static_cast<std::size_t>(i)] = std::sin(level * w);
    f[static_cast<std::size_t>(half + i)] = std::cos(level * w);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Model

template <class T>
WorldModel<T>::WorldModel(const ModelConfig& config) : config_(config) {
  std::mt19937_64 rng(config.seed);
  for (auto& [name, shape] : parameter_layout(config)) {
    auto values = init_values<T>(name, shape, config.hidden, rng);
    params_.add(name, shape, std::move(values));
  }
}

template <class T>
WorldModel<T>::WorldModel(const ModelConfig& config, ParameterSet<T> parameters)
    : config_(config), params_(std::move(parameters)) {
  const auto layout = parameter_layout(config);
  if (layout.size() != params_.entries.size()) {
    throw ShapeError("parameter set has " + std::to_string(params_.entries.size()) + " tensors, config expects " +
                     std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    const auto& e = params_.at(name);
    if (e.shape != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(e.shape) + ", config expects " +
                       shape_str(shape));
    }
  }
}

template <class T>
Tensor<T> WorldModel<T>::embed_actions(const Binding<T>& p, const Tensor<T>& actions) const {
  const int r = config_.temporal_factor;
  const int expected = config_.action_frames();
  if (actions.rank() != 3 || actions.dim(2) != config_.action_dim) {
    throw ShapeError("embed_actions: expected (batch, " + std::to_string(expected) + ", " +
                     std::to_string(config_.action_dim) + "), got " + shape_str(actions.shape()));
  }
  if (actions.dim(1) != expected) {
    throw ShapeError("embed_actions: action sequence length " + std::to_string(actions.dim(1)) +
                     ", expected 1 + r (T_l - 1) = " + std::to_string(expected));
  }
  auto h = linear(silu(linear(actions, p("action.fc1.w"), p("action.fc1.b"))), p("action.fc2.w"), p("action.fc2.b"));
  return conv1d(h, p("action.conv.w"), p("action.conv.b"), r, (kConvKernel - 1) / 2);
}

template <class T>
Tensor<T> WorldModel<T>::embed_timestep(const Binding<T>& p, std::span<const int> levels, std::int64_t batch) const {
  if (batch < 1 || levels.empty() || static_cast<std::int64_t>(levels.size()) % batch != 0) {
    throw ShapeError("embed_timestep: " + std::to_string(levels.size()) + " levels for batch " +
                     std::to_string(batch));
  }
  const std::int64_t steps = static_cast<std::int64_t>(levels.size()) / batch;
  const int F = config_.frequency_dim;
  std::vector<T> feats(levels.size() * static_cast<std::size_t>(F));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 0 || levels[i] >= config_.noise_levels) {
      throw DomainError("noise level index " + std::to_string(levels[i]) + " outside [0, " +
                        std::to_string(config_.noise_levels) + ")");
    }
    const auto f = timestep_features(levels[i], F);
    std::transform(f.begin(), f.end(), feats.begin() + static_cast<std::ptrdiff_t>(i * F),
                   [](double x) { return static_cast<T>(x); });
  }
  auto x = Tensor<T>::constant({batch, steps, F}, std::move(feats));
  return linear(silu(linear(x, p("time.fc1.w"), p("time.fc1.b"))), p("time.fc2.w"), p("time.fc2.b"));
}

template <class T>
Tensor<T> WorldModel<T>::conditioning(const Binding<T>& p, std::span<const int> levels,
                                      const Tensor<T>& actions) const {
  if (actions.rank() != 3) throw ShapeError("conditioning: actions must be (batch, L, d_a)");
  auto ct = embed_timestep(p, levels, actions.dim(0));
  if (config_.conditioning == Conditioning::cross_attention) return ct;
  auto a = embed_actions(p, actions);
  if (a.shape() != ct.shape()) {
    throw ShapeError("conditioning: action embedding " + shape_str(a.shape()) + " vs timestep embedding " +
                     shape_str(ct.shape()));
  }
  return add(ct, a);
}

template <class T>
Modulation<T> WorldModel<T>::adaln_modulation(const Binding<T>& p, const Tensor<T>& c, int block) const {
  if (block < 0 || block >= config_.layers) throw DomainError("block index " + std::to_string(block) + " out of range");
  if (c.rank() != 3 || c.dim(2) != config_.hidden) {
    throw ShapeError("adaln_modulation: conditioning must be (batch, T_l, " + std::to_string(config_.hidden) +
                     "), got " + shape_str(c.shape()));
  }
  const std::string pre = "blocks." + std::to_string(block) + ".mod";
  auto m = linear(silu(c), p(pre + ".w"), p(pre + ".b"));
  const std::int64_t d = config_.hidden;
  Modulation<T> out;
  for (int s = 0; s < kModulatedSublayers; ++s) {
    out.gamma[s] = slice_last(m, (3 * s + 0) * d, d);
    out.beta[s] = slice_last(m, (3 * s + 1) * d, d);
    out.alpha[s] = slice_last(m, (3 * s + 2) * d, d);
  }
  return out;
}

template <class T>
Tensor<T> WorldModel<T>::self_attention(const Binding<T>& p, const std::string& prefix, const Tensor<T>& h,
                                        const AttentionRope& rope) const {
  const std::int64_t d = config_.hidden;
  auto qkv = linear(h, p(prefix + "qkv.w"), p(prefix + "qkv.b"));
  auto o = attention(slice_last(qkv, 0, d), slice_last(qkv, d, d), slice_last(qkv, 2 * d, d), config_.heads, rope);
  return linear(o, p(prefix + "out.w"), p(prefix + "out.b"));
}

template <class T>
void WorldModel<T>::check_conditioning(const Tensor<T>& c, std::int64_t batch, std::int64_t steps,
                                       const char* what) const {
  if (c.rank() != 3 || c.dim(0) != batch || c.dim(1) != steps || c.dim(2) != config_.hidden) {
    throw ShapeError(std::string(what) + " must be (" + std::to_string(batch) + ", " + std::to_string(steps) + ", " +
                     std::to_string(config_.hidden) + "), got " + shape_str(c.shape()));
  }
}

template <class T>
Tensor<T> WorldModel<T>::block_forward(const Binding<T>& p, const Tensor<T>& x, const Tensor<T>& c, int block,
                                       const Tensor<T>& action_tokens, int grid_rows, int grid_cols) const {
  if (x.rank() != 4 || x.dim(3) != config_.hidden || x.dim(2) != static_cast<std::int64_t>(grid_rows) * grid_cols) {
    throw ShapeError("block_forward: tokens " + shape_str(x.shape()) + " do not match a " + std::to_string(grid_rows) +
                     "x" + std::to_string(grid_cols) + " grid of width " + std::to_string(config_.hidden));
  }
  const std::int64_t B = x.dim(0), Tn = x.dim(1), S = x.dim(2), d = x.dim(3);
  check_conditioning(c, B, Tn, "conditioning");
  const std::string pre = "blocks." + std::to_string(block) + ".";
  const auto mod = adaln_modulation(p, c, block);
  auto per_step = [&](const Tensor<T>& m) { return reshape(m, {B, Tn, 1, d}); };

  const RopeTable spatial_table(config_.head_dim(), 2, std::max(grid_rows, grid_cols), config_.rope_base);
  const RopePositions grid = RopePositions::grid(grid_rows, grid_cols);
  const RopeTable temporal_table(config_.head_dim(), 1, static_cast<int>(Tn), config_.rope_base);
  const RopePositions line = RopePositions::linear(static_cast<int>(Tn));

  // Spatial attention: tokens of one latent step attend to each other.
  auto h = layer_norm_modulated(x, per_step(mod.gamma[0]), per_step(mod.beta[0]));
  h = self_attention(p, pre + "spatial.", reshape(h, {B * Tn, S, d}), AttentionRope{&spatial_table, &grid, &grid});
  auto y = add(x, mul(reshape(h, {B, Tn, S, d}), per_step(mod.alpha[0])));

  if (action_tokens.defined()) {
    check_conditioning(action_tokens, B, Tn, "action tokens");
    auto q = linear(reshape(layer_norm(y), {B * Tn, S, d}), p(pre + "cross.q.w"), p(pre + "cross.q.b"));
    auto kv = linear(reshape(action_tokens, {B * Tn, 1, d}), p(pre + "cross.kv.w"), p(pre + "cross.kv.b"));
    auto o = attention(q, slice_last(kv, 0, d), slice_last(kv, d, d), config_.heads);
    o = linear(o, p(pre + "cross.out.w"), p(pre + "cross.out.b"));
    y = add(y, reshape(o, {B, Tn, S, d}));
  }

  // Temporal attention: each spatial site attends across latent steps.
  h = layer_norm_modulated(y, per_step(mod.gamma[1]), per_step(mod.beta[1]));
  h = reshape(transpose12(h), {B * S, Tn, d});
  h = self_attention(p, pre + "temporal.", h, AttentionRope{&temporal_table, &line, &line});
  h = transpose12(reshape(h, {B, S, Tn, d}));
  y = add(y, mul(h, per_step(mod.alpha[1])));

  h = layer_norm_modulated(y, per_step(mod.gamma[2]), per_step(mod.beta[2]));
  h = linear(silu(linear(h, p(pre + "mlp.fc1.w"), p(pre + "mlp.fc1.b"))), p(pre + "mlp.fc2.w"), p(pre + "mlp.fc2.b"));
  return add(y, mul(h, per_step(mod.alpha[2])));
}

template <class T>
void WorldModel<T>::check_latent(const Tensor<T>& latent) const {
  if (latent.rank() != 5 || latent.dim(2) != config_.latent_rows || latent.dim(3) != config_.latent_cols ||
      latent.dim(4) != config_.latent_channels || latent.dim(1) < 1) {
    throw ShapeError("latent must be (batch, steps, " + std::to_string(config_.latent_rows) + ", " +
                     std::to_string(config_.latent_cols) + ", " + std::to_string(config_.latent_channels) +
                     "), got " + shape_str(latent.shape()));
  }
}

namespace {

// Index maps between (B, T, rows, cols, C) latents and (B, T, S, p*p*C) patches.
std::vector<std::int64_t> patch_index(const Shape& latent, int p, bool to_patches) {
  const std::int64_t B = latent[0], Tn = latent[1], R = latent[2], Cc = latent[3], Ch = latent[4];
  const std::int64_t gr = R / p, gc = Cc / p, P = static_cast<std::int64_t>(p) * p * Ch;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(numel(latent)));
  for (std::int64_t bt = 0; bt < B * Tn; ++bt)
    for (std::int64_t i = 0; i < R; ++i)
      for (std::int64_t j = 0; j < Cc; ++j)
        for (std::int64_t c = 0; c < Ch; ++c) {
          const std::int64_t lat = ((bt * R + i) * Cc + j) * Ch + c;
          const std::int64_t tok = bt * gr * gc + (i / p) * gc + (j / p);
          const std::int64_t pat = tok * P + ((i % p) * p + (j % p)) * Ch + c;
          if (to_patches) idx[static_cast<std::size_t>(pat)] = lat;
          else idx[static_cast<std::size_t>(lat)] = pat;
        }
  return idx;
}

}  // namespace

template <class T>
Tensor<T> WorldModel<T>::trunk(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c,
                               const Tensor<T>& action_tokens) const {
  check_latent(latent);
  const std::int64_t B = latent.dim(0), Tn = latent.dim(1);
  check_conditioning(c, B, Tn, "conditioning");
  const int gr = config_.grid_rows(), gc = config_.grid_cols();
  const std::int64_t S = static_cast<std::int64_t>(gr) * gc, P = config_.patch_features(), d = config_.hidden;

  auto x = gather(latent, patch_index(latent.shape(), config_.patch, true), {B, Tn, S, P});
  x = linear(x, p("patch.w"), p("patch.b"));
  for (int i = 0; i < config_.layers; ++i) x = block_forward(p, x, c, i, action_tokens, gr, gc);

  auto m = linear(silu(c), p("final.mod.w"), p("final.mod.b"));
  auto gamma = reshape(slice_last(m, 0, d), {B, Tn, 1, d});
  auto beta = reshape(slice_last(m, d, d), {B, Tn, 1, d});
  auto out = linear(layer_norm_modulated(x, gamma, beta), p("head.w"), p("head.b"));
  return gather(out, patch_index(latent.shape(), config_.patch, false), latent.shape());
}

template <class T>
Tensor<T> WorldModel<T>::dit_forward(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c) const {
  return trunk(p, latent, c, Tensor<T>());
}

template <class T>
Tensor<T> WorldModel<T>::cross_attn_forward(const Binding<T>& p, const Tensor<T>& latent, const Tensor<T>& c,
                                            const Tensor<T>& action_tokens) const {
  if (config_.conditioning != Conditioning::cross_attention) {
    throw DomainError("cross_attn_forward requires conditioning mode cross_attention, model uses " +
                      std::string(to_string(config_.conditioning)));
  }
  if (!action_tokens.defined()) throw ShapeError("cross_attn_forward: action tokens missing");
  check_latent(latent);
  if (action_tokens.rank() != 3 || action_tokens.dim(1) != latent.dim(1)) {
    throw ShapeError("cross_attn_forward: " + (action_tokens.rank() == 3 ? std::to_string(action_tokens.dim(1)) : "?") +
                     " action tokens for " + std::to_string(latent.dim(1)) + " latent steps");
  }
  return trunk(p, latent, c, action_tokens);
}

template <class T>
Tensor<T> WorldModel<T>::predict(const Binding<T>& p, const Tensor<T>& latent, std::span<const int> levels,
                                 const Tensor<T>& actions) const {
  check_latent(latent);
  if (static_cast<std::int64_t>(levels.size()) != latent.dim(0) * latent.dim(1)) {
    throw ShapeError("predict: " + std::to_string(levels.size()) + " noise levels for latent " +
                     shape_str(latent.shape()));
  }
  if (actions.rank() != 3 || actions.dim(0) != latent.dim(0)) {
    throw ShapeError("predict: actions " + shape_str(actions.shape()) + " do not match batch of latent " +
                     shape_str(latent.shape()));
  }
  if (config_.conditioning == Conditioning::cross_attention) {
    auto ct = embed_timestep(p, levels, latent.dim(0));
    return cross_attn_forward(p, latent, ct, embed_actions(p, actions));
  }
  return dit_forward(p, latent, conditioning(p, levels, actions));
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class Binding<float>;
template class Binding<double>;
template class WorldModel<float>;
template class WorldModel<double>;

}  // namespace acwm::model
